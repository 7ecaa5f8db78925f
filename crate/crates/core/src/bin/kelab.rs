use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kelab::family::Profile;
use kelab::runner::{run, ExperimentKind, RecipeKind, RunConfig};
use kelab::{DivisorComponent, FixedPoint};

#[derive(Parser)]
#[command(name = "kelab", version, about = "Radial Kähler-Einstein experiments on the Riemann sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Direct Kähler-Einstein solve, variational probe and regularization diagonal.
    Solve(Common),
    /// p-step Ricci iteration with contraction and limit checks.
    Ricci(Common),
    /// Bergman kernel iteration against a Ricci iterate.
    Bergman(Common),
    /// Fiberwise solves over a one-parameter family with positivity checks.
    Family(Common),
    /// Every acceptance configuration, with a summary table.
    Suite(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    Product,
    Perturbed,
    Conic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Bump,
    Lorentzian,
    SoftplusProduct,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Common {
    /// TOML configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    /// Divisor coefficient at 0.
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    kink_at: Option<f64>,
    #[arg(long)]
    perturbations: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    stop_tol: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    /// Fixed Ricci step for the Bergman run instead of the converged iterate.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    recipe: Option<RecipeArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    base_nodes: Option<usize>,
    /// Build the family without the precheck and expect positivity to fail.
    #[arg(long)]
    control: bool,
}

impl Common {
    fn config(&self) -> kelab::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f.clone(); } )* };
        }
        set!(out, seed, tol, k, p, half_width, nodes, kink_at, perturbations, m_max, stop_tol, levels, step, eps, lambda, base_nodes);
        if let Some(a0) = self.a0 {
            c.divisor = Some(vec![DivisorComponent {
                point: FixedPoint::Zero,
                coefficient: a0,
                perturbation: 0.0,
            }]);
        }
        if let Some(r) = self.recipe {
            c.recipe = Some(match r {
                RecipeArg::Product => RecipeKind::Product,
                RecipeArg::Perturbed => RecipeKind::Perturbed,
                RecipeArg::Conic => RecipeKind::Conic,
            });
        }
        if let Some(p) = self.profile {
            c.profile = Some(match p {
                ProfileArg::Bump => Profile::Bump,
                ProfileArg::Lorentzian => Profile::Lorentzian,
                ProfileArg::SoftplusProduct => Profile::SoftplusProduct,
            });
        }
        if self.control {
            c.control = Some(true);
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Solve(c) => (ExperimentKind::Solve, c),
        Command::Ricci(c) => (ExperimentKind::Ricci, c),
        Command::Bergman(c) => (ExperimentKind::Bergman, c),
        Command::Family(c) => (ExperimentKind::Family, c),
        Command::Suite(c) => (ExperimentKind::Suite, c),
    };
    let manifest = match common.config().and_then(|c| run(&c, kind)) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("kelab: {e}");
            return ExitCode::from(2);
        }
    };
    for v in &manifest.verdicts {
        let value = v.value.map_or(String::new(), |x| format!("{x:.3e}"));
        let threshold = v.threshold.map_or(String::new(), |x| format!("{x:.3e}"));
        println!(
            "{:<4} {:<48} {:>11} {:>11} {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.check,
            value,
            threshold,
            v.detail
        );
    }
    println!("manifest: {}", manifest.config.out.join("manifest.json").display());
    if manifest.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
