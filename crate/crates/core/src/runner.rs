//! Experiment runner behind the `kelab` binary.
//!
//! A run is described by a flat TOML document ([`RunConfig`]). Every run writes
//! `manifest.json` into its output directory, also when a computation fails,
//! and the process exit status is 0 iff every verdict in it passed.
//!
//! Config keys (all optional; defaults depend on the experiment kind):
//!
//! | key | meaning |
//! |---|---|
//! | `kind` | `solve`, `ricci`, `bergman`, `family` or `suite` |
//! | `k`, `p`, `divisor` | twist degree, Ricci step, `[{point, coefficient}]` |
//! | `half_width`, `nodes` | fiber grid `[−T, T]` with `N` nodes |
//! | `tol`, `seed`, `out` | Newton tolerance, RNG seed, output directory |
//! | `kink_at` | add `max(t − a, 0)` to the twist (`solve`) |
//! | `deltas`, `epsilons`, `scheme` | regularization schedules (`solve`) |
//! | `perturbations`, `amplitude` | variational probe (`solve`) |
//! | `m_max`, `stop_tol` | Ricci iteration limits |
//! | `levels`, `step`, `eps`, `window`, `distance_bound` | Bergman run |
//! | `recipe`, `lambda`, `profile`, `base_lo`, `base_hi`, `base_nodes`, `control`, `ns_m_max` | family run |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bergman::{
    c_ell_trace, convergence_check, gram_diagonal, integral_chain_check, run_bergman, write_level_trace,
    BergmanSetup, RicciStage,
};
use crate::energy::maximizer_check;
use crate::error::{Error, Result};
use crate::family::{
    admissible_exponents, base_positivity_check, build_family_with, ns_convexity_check, solve_fiberwise,
    uniform_sup_check, write_ns_trace, BaseGrid, FamilyRecipe, Profile, POSITIVITY_TOL,
};
use crate::io::{fmt_num, write_atomic, write_csv_rows, write_json};
use crate::radial::{make_grid, DivisorComponent, DivisorData, FixedPoint, RadialGrid, RadialWeight};
use crate::ricci::{compare_to_ke, fixed_point_residual, run_ricci, RicciConfig, RicciSummary};
use crate::solver::{
    fubini_study_solution, regularized_diagonal, solve_ke_ode, MAProblem, RegularizationScheme, DEFAULT_MAX_ITER,
};

/// Experiment kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Solve,
    Ricci,
    Bergman,
    Family,
    Suite,
}

/// Family recipe selector of the flat schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    Product,
    Perturbed,
    Conic,
}

/// Raw configuration as read from TOML and CLI overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<ExperimentKind>,
    pub k: Option<f64>,
    pub p: Option<usize>,
    pub divisor: Option<Vec<DivisorComponent>>,
    pub half_width: Option<f64>,
    pub nodes: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub kink_at: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub epsilons: Option<Vec<f64>>,
    pub scheme: Option<RegularizationScheme>,
    pub perturbations: Option<usize>,
    pub amplitude: Option<f64>,
    pub m_max: Option<usize>,
    pub stop_tol: Option<f64>,
    pub levels: Option<usize>,
    pub step: Option<usize>,
    pub eps: Option<f64>,
    pub window: Option<f64>,
    pub distance_bound: Option<f64>,
    pub recipe: Option<RecipeKind>,
    pub lambda: Option<f64>,
    pub profile: Option<Profile>,
    pub base_lo: Option<f64>,
    pub base_hi: Option<f64>,
    pub base_nodes: Option<usize>,
    pub control: Option<bool>,
    pub ns_m_max: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Fills every key left unset with its default for `kind` and validates.
    pub fn resolve(&self, kind: ExperimentKind) -> Result<ResolvedConfig> {
        let (t_default, n_default) = match kind {
            ExperimentKind::Bergman => (crate::bergman::DEFAULT_HALF_WIDTH, crate::bergman::DEFAULT_NODES),
            ExperimentKind::Family => (30.0, 1024),
            _ => (30.0, 4096),
        };
        let divisor = self.divisor.clone().unwrap_or_default();
        let r = ResolvedConfig {
            kind,
            k: self.k.unwrap_or(4.0),
            p: self.p.unwrap_or(2),
            divisor: divisor.clone(),
            half_width: self.half_width.unwrap_or(t_default),
            nodes: self.nodes.unwrap_or(n_default),
            tol: self.tol.unwrap_or(crate::solver::DEFAULT_TOL),
            seed: self.seed.unwrap_or(0),
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("kelab-out")),
            kink_at: self.kink_at,
            deltas: self.deltas.clone(),
            epsilons: self.epsilons.clone(),
            scheme: self.scheme.unwrap_or(RegularizationScheme::TwistSmoothing),
            perturbations: self.perturbations.unwrap_or(100),
            amplitude: self.amplitude.unwrap_or(0.1),
            m_max: self.m_max.unwrap_or(500),
            stop_tol: self.stop_tol.unwrap_or(crate::ricci::DEFAULT_STOP_TOL),
            levels: self.levels.unwrap_or(200),
            step: self.step,
            eps: self.eps.unwrap_or(0.0),
            window: self.window.unwrap_or(10.0),
            distance_bound: self
                .distance_bound
                .unwrap_or(if divisor.is_empty() { 0.05 } else { 0.1 }),
            recipe: self
                .recipe
                .unwrap_or(if divisor.is_empty() { RecipeKind::Perturbed } else { RecipeKind::Conic }),
            lambda: self.lambda.unwrap_or(0.5),
            profile: self.profile.unwrap_or(Profile::Bump),
            base_lo: self.base_lo.unwrap_or(-2.0),
            base_hi: self.base_hi.unwrap_or(2.0),
            base_nodes: self.base_nodes.unwrap_or(41),
            control: self.control.unwrap_or(false),
            ns_m_max: self.ns_m_max.unwrap_or(3),
        };
        r.validate()?;
        Ok(r)
    }
}

/// Configuration with every key set; echoed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub kind: ExperimentKind,
    pub k: f64,
    pub p: usize,
    pub divisor: Vec<DivisorComponent>,
    pub half_width: f64,
    pub nodes: usize,
    pub tol: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub kink_at: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub epsilons: Option<Vec<f64>>,
    pub scheme: RegularizationScheme,
    pub perturbations: usize,
    pub amplitude: f64,
    pub m_max: usize,
    pub stop_tol: f64,
    pub levels: usize,
    pub step: Option<usize>,
    pub eps: f64,
    pub window: f64,
    pub distance_bound: f64,
    pub recipe: RecipeKind,
    pub lambda: f64,
    pub profile: Profile,
    pub base_lo: f64,
    pub base_hi: f64,
    pub base_nodes: usize,
    pub control: bool,
    pub ns_m_max: usize,
}

fn positive(field: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::invalid(field, format!("must be finite and positive, got {x}")));
    }
    Ok(())
}

fn schedule(field: &str, xs: &Option<Vec<f64>>) -> Result<()> {
    if let Some(xs) = xs {
        if xs.is_empty() {
            return Err(Error::invalid(field, "schedule is empty"));
        }
        if xs.iter().any(|x| !x.is_finite() || *x <= 0.0 || *x >= 1.0) {
            return Err(Error::invalid(field, "schedule values must lie in (0, 1)"));
        }
        if xs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(field, "schedule must be strictly decreasing"));
        }
    }
    Ok(())
}

impl ResolvedConfig {
    fn validate(&self) -> Result<()> {
        if !self.k.is_finite() {
            return Err(Error::invalid("k", "must be finite"));
        }
        self.grid()?;
        self.divisor_data()?;
        positive("tol", self.tol)?;
        positive("stop_tol", self.stop_tol)?;
        positive("amplitude", self.amplitude)?;
        positive("window", self.window)?;
        positive("distance_bound", self.distance_bound)?;
        if self.p == 0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::invalid("eps", "must be finite and nonnegative"));
        }
        if self.kink_at.is_some_and(|a| !a.is_finite()) {
            return Err(Error::invalid("kink_at", "must be finite"));
        }
        schedule("deltas", &self.deltas)?;
        schedule("epsilons", &self.epsilons)?;
        if self.deltas.is_some() != self.epsilons.is_some() {
            return Err(Error::invalid("deltas", "`deltas` and `epsilons` must be given together"));
        }
        if self.m_max < 2 {
            return Err(Error::invalid("m_max", "need at least two steps"));
        }
        if self.step == Some(0) {
            return Err(Error::invalid("step", "the outer index starts at 1"));
        }
        if self.kind == ExperimentKind::Bergman && self.levels < 3 {
            return Err(Error::invalid("levels", "need at least three levels"));
        }
        if !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite"));
        }
        BaseGrid::new(self.base_lo, self.base_hi, self.base_nodes)?;
        if self.kind == ExperimentKind::Family && self.base_nodes < 3 {
            return Err(Error::invalid("base_nodes", "need at least 3 base nodes"));
        }
        if self.ns_m_max == 0 {
            return Err(Error::invalid("ns_m_max", "must be at least 1"));
        }
        if self.kind == ExperimentKind::Family && self.recipe == RecipeKind::Conic && self.a0() <= 0.0 {
            return Err(Error::invalid("divisor", "the conic recipe needs a positive coefficient at 0"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        make_grid(self.half_width, self.nodes)
    }

    pub fn divisor_data(&self) -> Result<DivisorData> {
        let d = DivisorData::new(self.divisor.clone())?;
        if !d.is_klt() {
            return Err(Error::invalid("divisor", "coefficients must be below 1"));
        }
        Ok(d)
    }

    fn a0(&self) -> f64 {
        self.divisor
            .iter()
            .filter(|c| c.point == FixedPoint::Zero)
            .map(|c| c.coefficient)
            .sum()
    }

    fn twist(&self, grid: RadialGrid) -> RadialWeight {
        let fs = RadialWeight::fubini_study(grid, self.k);
        match self.kink_at {
            Some(a) => &fs + &RadialWeight::kink(grid, a),
            None => fs,
        }
    }

    fn family_recipe(&self) -> FamilyRecipe {
        match self.recipe {
            RecipeKind::Product => FamilyRecipe::Product { k: self.k },
            RecipeKind::Perturbed => FamilyRecipe::Perturbed {
                k: self.k,
                lambda: self.lambda,
                profile: self.profile,
            },
            RecipeKind::Conic => FamilyRecipe::Conic {
                k: self.k,
                a0: self.a0(),
                lambda: self.lambda,
                profile: self.profile,
            },
        }
    }
}

/// One named pass/fail outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Verdict {
    fn at_most(check: &str, value: f64, threshold: f64) -> Self {
        Verdict {
            check: check.into(),
            passed: value <= threshold,
            value: Some(value),
            threshold: Some(threshold),
            detail: String::new(),
        }
    }

    fn flag(check: &str, passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            check: check.into(),
            passed,
            value: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    fn failure(check: &str, err: &Error) -> Self {
        Self::flag(check, false, err.to_string())
    }
}

/// Record written to `manifest.json` by every run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ResolvedConfig,
    pub convention_hash: String,
    pub versions: BTreeMap<String, String>,
    /// Not covered by the determinism guarantee.
    pub wall_clock_seconds: f64,
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<String>,
    pub passed: bool,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn csv_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.path(name);
        write_atomic(&path, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }
}

/// Runs one experiment and writes its artifacts and manifest.
///
/// Only configuration errors are returned as `Err`; failures during the
/// computation become failing verdicts in the manifest.
pub fn run(config: &RunConfig, kind: ExperimentKind) -> Result<RunManifest> {
    let cfg = config.resolve(kind)?;
    let start = Instant::now();
    let mut out = Outputs::new(&cfg.out)?;
    let mut verdicts = Vec::new();
    let result = match kind {
        ExperimentKind::Solve => run_solve(&cfg, &mut out, &mut verdicts),
        ExperimentKind::Ricci => run_ricci_kind(&cfg, &mut out, &mut verdicts),
        ExperimentKind::Bergman => run_bergman_kind(&cfg, &mut out, &mut verdicts),
        ExperimentKind::Family => run_family(&cfg, &mut out, &mut verdicts),
        ExperimentKind::Suite => run_suite(&cfg, &mut out, &mut verdicts),
    };
    if let Err(e) = result {
        verdicts.push(Verdict::failure("computation", &e));
    }
    if verdicts.is_empty() {
        verdicts.push(Verdict::flag("computation", false, "no checks were executed"));
    }
    let passed = verdicts.iter().all(|v| v.passed);
    let mut versions = BTreeMap::new();
    versions.insert("kelab".to_string(), crate::VERSION.to_string());
    versions.insert("config_schema".to_string(), "1".to_string());
    let manifest_path = out.path("manifest.json");
    let manifest = RunManifest {
        config: cfg,
        convention_hash: crate::convention_hash(),
        versions,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        verdicts,
        outputs: out.written.clone(),
        passed,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

fn run_solve(cfg: &ResolvedConfig, out: &mut Outputs, verdicts: &mut Vec<Verdict>) -> Result<()> {
    let grid = cfg.grid()?;
    let divisor = cfg.divisor_data()?;
    let prob = MAProblem::kahler_einstein(cfg.twist(grid), divisor.clone())?;
    let report = solve_ke_ode(&prob, cfg.tol, DEFAULT_MAX_ITER)?;
    out.csv_with("solution.csv", |b| report.ke_weight.write_csv(b))?;
    out.json("report.json", &report.to_record())?;
    verdicts.push(Verdict::at_most("newton_residual", report.residual, cfg.tol));
    verdicts.push(Verdict::at_most("mass_defect", report.mass_defect, crate::radial::MASS_TOLERANCE));
    let (lo, hi) = report.lelong_numbers();
    let want = (divisor.coefficient(FixedPoint::Zero, 0.0), divisor.coefficient(FixedPoint::Infinity, 0.0));
    verdicts.push(Verdict::at_most(
        "lelong_numbers",
        (lo - want.0).abs().max((hi - want.1).abs()),
        1e-6,
    ));
    if divisor.is_empty() && cfg.kink_at.is_none() {
        let fs = fubini_study_solution(grid, cfg.k);
        let range = grid.window(-(cfg.half_width - 2.0), cfg.half_width - 2.0);
        verdicts.push(Verdict::at_most("fs_oracle", report.solution.sup_distance_on(&fs, range), 1e-6));
    }
    if cfg.perturbations > 0 {
        let check = maximizer_check(&prob, &report, cfg.perturbations, cfg.amplitude, cfg.seed)?;
        out.json("variational.json", &check)?;
        verdicts.push(Verdict::at_most("g_maximizer", check.worst_increase, 0.0));
        verdicts.push(Verdict::at_most("energy_first_variation", check.first_variation_error, 1e-6));
    }
    if let (Some(deltas), Some(epsilons)) = (&cfg.deltas, &cfg.epsilons) {
        let diag = regularized_diagonal(&prob, cfg.scheme, deltas, epsilons, cfg.tol)?;
        let rows = diag.steps.iter().enumerate().map(|(i, s)| {
            vec![
                fmt_num(s.eps),
                fmt_num(s.delta),
                fmt_num(crate::solver::sup_distance(&s.report.correction, &report.correction)),
                if i == 0 { String::new() } else { fmt_num(diag.trace[i - 1]) },
            ]
        });
        let path = out.path("diagonal.csv");
        write_csv_rows(&path, &["eps", "delta", "distance_to_limit", "step_distance"], rows)?;
        verdicts.push(Verdict {
            threshold: Some(1e-3),
            passed: diag.distance_to(&report) < 1e-3,
            value: Some(diag.distance_to(&report)),
            check: "regularized_diagonal".into(),
            detail: String::new(),
        });
    }
    Ok(())
}

fn run_ricci_kind(cfg: &ResolvedConfig, out: &mut Outputs, verdicts: &mut Vec<Verdict>) -> Result<()> {
    let grid = cfg.grid()?;
    let divisor = cfg.divisor_data()?;
    let rc = RicciConfig::new(cfg.twist(grid), divisor.clone(), cfg.p)?;
    let (state, trace) = match run_ricci(rc.clone(), cfg.m_max, cfg.stop_tol) {
        Ok(r) => r,
        Err(e @ Error::ContractionFailure { .. }) => {
            verdicts.push(Verdict::failure("contraction", &e));
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    out.csv_with("ricci_trace.csv", |b| trace.write_csv(b))?;
    let summary = RicciSummary::new(&state, &trace, cfg.stop_tol)?;
    out.json("ricci_summary.json", &summary)?;
    verdicts.push(Verdict::at_most("contraction", summary.max_ratio, rc.coupling() + crate::ricci::RATIO_SLACK));
    verdicts.push(Verdict::at_most("envelope", trace.envelope_factor(), 1.01));
    verdicts.push(Verdict::flag(
        "converged",
        summary.converged,
        format!("final gap {} after {} steps", fmt_num(summary.final_gap), summary.steps),
    ));
    verdicts.push(Verdict::at_most("fixed_point_residual", fixed_point_residual(&state)?, 1e-6));
    let ke = solve_ke_ode(&rc.ke_problem()?, cfg.tol, DEFAULT_MAX_ITER)?;
    let cmp = compare_to_ke(&state, &ke)?;
    out.json("ke_comparison.json", &cmp)?;
    verdicts.push(Verdict::at_most("ke_distance", cmp.sup_distance, 1e-5));
    let want = (divisor.coefficient(FixedPoint::Zero, 0.0), divisor.coefficient(FixedPoint::Infinity, 0.0));
    verdicts.push(Verdict::at_most(
        "lelong_difference",
        (cmp.lelong_difference.0 - want.0)
            .abs()
            .max((cmp.lelong_difference.1 - want.1).abs()),
        1e-6,
    ));
    emit_plotdata(&[out.dir.join("ricci_trace.csv")], &out.dir.join("plot"))?;
    Ok(())
}

fn run_bergman_kind(cfg: &ResolvedConfig, out: &mut Outputs, verdicts: &mut Vec<Verdict>) -> Result<()> {
    let divisor = cfg.divisor_data()?;
    let setup = BergmanSetup {
        k: cfg.k,
        divisor: divisor.clone(),
        p: cfg.p,
        stage: match cfg.step {
            Some(m) => RicciStage::Step(m),
            None => RicciStage::Converged {
                stop_tol: cfg.stop_tol,
                m_max: cfg.m_max,
            },
        },
        levels: cfg.levels,
        half_width: cfg.half_width,
        nodes: cfg.nodes,
        eps: cfg.eps,
    };
    let run = run_bergman(&setup)?;
    let conv = convergence_check(&run.levels, &run.chain, (-cfg.window, cfg.window))?;
    let chain = integral_chain_check(&run.levels, &run.chain)?;
    let c_ell = if cfg.eps == 0.0 { c_ell_trace(&run.levels, &run.chain)? } else { Vec::new() };
    out.csv_with("bergman_levels.csv", |b| write_level_trace(b, &run.levels, &conv, &chain, &c_ell))?;
    out.json("bergman_convergence.json", &conv)?;
    out.json("bergman_chain.json", &chain)?;
    if divisor.is_empty() && cfg.p == 1 && cfg.k == 4.0 {
        let pi = std::f64::consts::PI;
        let l1 = &run.levels[0];
        let g = gram_diagonal(&l1.basis, &run.chain, None)?;
        let err = g
            .iter()
            .zip([2.0 * pi / 3.0, pi / 3.0, 2.0 * pi / 3.0])
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        verdicts.push(Verdict::at_most("gram_beta_oracle", err, 1e-8));
    }
    let last = *conv.distances.last().expect("at least three levels");
    verdicts.push(Verdict::at_most("kernel_distance", last, cfg.distance_bound));
    if cfg.levels > 20 {
        verdicts.push(Verdict::flag("monotone_from_20", conv.monotone_from_20, ""));
    }
    let worst = chain.certificates.iter().map(|c| -c.slack).fold(f64::NEG_INFINITY, f64::max);
    verdicts.push(Verdict {
        check: "integral_chain".into(),
        passed: chain.certificates.iter().all(|c| c.holds),
        value: Some(worst),
        threshold: Some(crate::bergman::CHAIN_SLACK.ln_1p()),
        detail: "largest log-excess of the left side over the right side".into(),
    });
    if divisor.is_empty() {
        let dims_ok = run.levels.iter().all(|l| {
            let expect = l.level() as f64 * cfg.p as f64 * (cfg.k - 2.0) + 1.0;
            l.basis.dimension() as f64 == expect
        });
        verdicts.push(Verdict::flag("dimension_formula", dims_ok, ""));
    }
    if let Some(d) = run.cross_route_distance {
        verdicts.push(Verdict::at_most("ricci_ke_cross_route", d, 1e-5));
    }
    emit_plotdata(&[out.dir.join("bergman_levels.csv")], &out.dir.join("plot"))?;
    Ok(())
}

fn run_family(cfg: &ResolvedConfig, out: &mut Outputs, verdicts: &mut Vec<Verdict>) -> Result<()> {
    let grid = cfg.grid()?;
    let base = BaseGrid::new(cfg.base_lo, cfg.base_hi, cfg.base_nodes)?;
    let recipe = cfg.family_recipe();
    let family = match build_family_with(recipe, base, grid, cfg.control) {
        Ok(f) => f,
        Err(e @ Error::JointPositivity { .. }) => {
            verdicts.push(Verdict::failure("twist_precheck", &e));
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    if let Some(pre) = &family.precheck {
        out.json("precheck.json", pre)?;
    }
    let rel = solve_fiberwise(&family, cfg.tol)?;
    out.csv_with("relative_potential.csv", |b| rel.write_csv(b))?;
    let cert = base_positivity_check(&rel, POSITIVITY_TOL)?;
    out.json("positivity.json", &cert)?;
    if cfg.control {
        verdicts.push(Verdict {
            check: "control_detected".into(),
            passed: !cert.passed,
            value: Some(cert.worst_scaled_det.min(cert.worst_scaled_tt)),
            threshold: Some(-POSITIVITY_TOL),
            detail: "the bypassed family must fail the positivity check".into(),
        });
        return Ok(());
    }
    verdicts.push(Verdict {
        check: "joint_positivity".into(),
        passed: cert.passed,
        value: Some(cert.worst_scaled_det.min(cert.worst_scaled_tt)),
        threshold: Some(-POSITIVITY_TOL),
        detail: format!("min det {} at {:?}", fmt_num(cert.min_det), cert.min_det_at),
    });
    let sub = (cfg.base_lo, cfg.base_hi);
    let sup = uniform_sup_check(&rel, sub)?;
    let fine = build_family_with(recipe, base, grid.refined(), false)?;
    let sup_fine = uniform_sup_check(&solve_fiberwise(&fine, cfg.tol)?, sub)?;
    out.json("uniform_sup.json", &[&sup, &sup_fine])?;
    verdicts.push(Verdict::at_most("uniform_sup_drift", (sup.bound - sup_fine.bound).abs(), 1e-4));
    let mut worst = f64::INFINITY;
    let mut all = true;
    for m in 1..=cfg.ns_m_max {
        for j in admissible_exponents(m, &family) {
            let ns = ns_convexity_check(j, m, &family)?;
            out.csv_with(&format!("ns_j{j}_m{m}.csv"), |b| write_ns_trace(b, &family, &ns))?;
            worst = worst.min(ns.min_second_difference);
            all &= ns.passed;
        }
    }
    verdicts.push(Verdict {
        check: "ns_convexity".into(),
        passed: all,
        value: Some(worst),
        threshold: Some(-crate::family::NS_CONVEXITY_TOL),
        detail: String::new(),
    });
    Ok(())
}

/// Desk-scale configurations covering every acceptance criterion.
pub fn suite_members(base: &ResolvedConfig) -> Vec<(String, ExperimentKind, RunConfig)> {
    let conic = Some(vec![DivisorComponent {
        point: FixedPoint::Zero,
        coefficient: 0.5,
        perturbation: 0.0,
    }]);
    let common = RunConfig {
        tol: Some(base.tol),
        seed: Some(base.seed),
        ..Default::default()
    };
    let schedule: Vec<f64> = (0..=10).map(|i| 0.1 * 0.5f64.powi(i)).collect();
    let mut members = vec![
        ("solve_fs".into(), ExperimentKind::Solve, common.clone()),
        (
            "solve_diagonal_smooth".into(),
            ExperimentKind::Solve,
            RunConfig {
                deltas: Some(schedule.clone()),
                epsilons: Some(schedule.clone()),
                perturbations: Some(0),
                ..common.clone()
            },
        ),
        (
            "solve_diagonal_kinked".into(),
            ExperimentKind::Solve,
            RunConfig {
                kink_at: Some(0.0),
                deltas: Some(schedule.clone()),
                epsilons: Some(schedule),
                perturbations: Some(0),
                ..common.clone()
            },
        ),
    ];
    for p in [2, 3, 5] {
        for (tag, div) in [("smooth", None), ("conic", conic.clone())] {
            members.push((
                format!("ricci_p{p}_{tag}"),
                ExperimentKind::Ricci,
                RunConfig {
                    p: Some(p),
                    divisor: div,
                    ..common.clone()
                },
            ));
        }
    }
    members.push((
        "bergman_smooth".into(),
        ExperimentKind::Bergman,
        RunConfig {
            p: Some(1),
            ..common.clone()
        },
    ));
    members.push((
        "bergman_conic".into(),
        ExperimentKind::Bergman,
        RunConfig {
            p: Some(2),
            divisor: conic.clone(),
            ..common.clone()
        },
    ));
    for (tag, recipe, profile, lambda, div) in [
        ("family_product", RecipeKind::Product, Profile::Bump, 0.0, None),
        ("family_bump", RecipeKind::Perturbed, Profile::Bump, 0.5, None),
        ("family_lorentzian", RecipeKind::Perturbed, Profile::Lorentzian, 0.05, None),
        ("family_conic", RecipeKind::Conic, Profile::Bump, 0.5, conic.clone()),
    ] {
        members.push((
            tag.into(),
            ExperimentKind::Family,
            RunConfig {
                recipe: Some(recipe),
                profile: Some(profile),
                lambda: Some(lambda),
                divisor: div,
                ..common.clone()
            },
        ));
    }
    members.push((
        "family_control".into(),
        ExperimentKind::Family,
        RunConfig {
            lambda: Some(-0.5),
            control: Some(true),
            ..common
        },
    ));
    members
}

fn run_suite(cfg: &ResolvedConfig, out: &mut Outputs, verdicts: &mut Vec<Verdict>) -> Result<()> {
    let mut rows = Vec::new();
    for (name, kind, mut member) in suite_members(cfg) {
        member.out = Some(cfg.out.join(&name));
        let manifest = run(&member, kind)?;
        for v in manifest.verdicts {
            rows.push(vec![
                name.clone(),
                v.check.clone(),
                if v.passed { "pass" } else { "fail" }.to_string(),
                v.value.map_or(String::new(), fmt_num),
                v.threshold.map_or(String::new(), fmt_num),
            ]);
            verdicts.push(Verdict {
                check: format!("{name}/{}", v.check),
                ..v
            });
        }
    }
    let path = out.path("summary.csv");
    write_csv_rows(&path, &["member", "check", "verdict", "value", "threshold"], rows)?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(Error::invalid("trace", format!("missing trace file {}", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::invalid("trace", format!("{} has no `{name}` column", path.display())))
}

/// Turns trace files into plot-ready CSVs in `dir`:
///
/// - a Ricci trace gives `contraction.csv` with `m, gap, ratio, bound`;
/// - a Bergman level trace gives `kernel_distance.csv` with `level, distance, chain_slack`.
pub fn emit_plotdata(traces: &[PathBuf], dir: &Path) -> Result<Vec<PathBuf>> {
    if traces.is_empty() {
        return Err(Error::invalid("traces", "no trace files given"));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for path in traces {
        let (header, rows) = read_table(path)?;
        if header.iter().any(|h| h == "gap") {
            let (m, gap, ratio) = (column(&header, "m", path)?, column(&header, "gap", path)?, column(&header, "ratio", path)?);
            let mut p_value = None;
            if let Some(summary) = path.parent().map(|d| d.join("ricci_summary.json")).filter(|s| s.exists()) {
                let s: RicciSummary = serde_json::from_str(&fs::read_to_string(summary)?)?;
                p_value = Some(s.p as f64);
            }
            let p = p_value.ok_or_else(|| Error::invalid("trace", "Ricci trace without its summary"))?;
            let bound = fmt_num((p - 1.0) / p);
            let target = dir.join("contraction.csv");
            write_csv_rows(
                &target,
                &["m", "gap", "ratio", "bound"],
                rows.iter().map(|r| vec![r[m].clone(), r[gap].clone(), r[ratio].clone(), bound.clone()]),
            )?;
            written.push(target);
        } else if header.iter().any(|h| h == "chain_slack") {
            let (l, d, c) = (
                column(&header, "level", path)?,
                column(&header, "distance", path)?,
                column(&header, "chain_slack", path)?,
            );
            let target = dir.join("kernel_distance.csv");
            write_csv_rows(
                &target,
                &["level", "distance", "chain_slack"],
                rows.iter().map(|r| vec![r[l].clone(), r[d].clone(), r[c].clone()]),
            )?;
            written.push(target);
        } else {
            return Err(Error::invalid("trace", format!("{} is not a recognized trace", path.display())));
        }
    }
    Ok(written)
}
