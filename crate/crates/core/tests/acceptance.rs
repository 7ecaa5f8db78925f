use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use kelab::bergman::{
    convergence_check, gram_diagonal, integral_chain_check, run_bergman, section_range, BergmanRun, BergmanSetup,
    RicciStage,
};
use kelab::energy::{energy, energy_first_variation, maximizer_check};
use kelab::family::{
    admissible_exponents, base_positivity_check, build_family, build_family_with, ns_convexity_check,
    solve_fiberwise, uniform_sup_check, BaseGrid, FamilyRecipe, Profile,
};
use kelab::ricci::{compare_to_ke, fixed_point_residual, run_ricci, RicciConfig};
use kelab::solver::{regularized_diagonal, solve_ke_ode, MAProblem, RegularizationScheme, DEFAULT_MAX_ITER};
use kelab::{make_grid, DivisorData, FixedPoint, RadialWeight};

const ORACLE_TOL: f64 = 1e-6;
const RATIO_SLACK: f64 = 1e-3;
const GAP_FLOOR: f64 = 1e-10;
const ENVELOPE_SLACK: f64 = 1e-2;
const FIXED_POINT_TOL: f64 = 1e-6;
const KE_TOL: f64 = 1e-5;
const GRAM_TOL: f64 = 1e-8;
const SMOOTH_DISTANCE: f64 = 0.05;
const CONIC_DISTANCE: f64 = 0.1;
const CHAIN_TOL: f64 = 1e-8;
const FIRST_VARIATION_TOL: f64 = 1e-6;
const DIAGONAL_TOL: f64 = 1e-3;
const POSITIVITY_TOL: f64 = 1e-6;
const NS_TOL: f64 = 1e-8;
const DRIFT_TOL: f64 = 1e-4;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn half() -> DivisorData {
    DivisorData::point(FixedPoint::Zero, 0.5).unwrap()
}

// Closed form for k = 4: 2 log(1 + e^t) − log π, evaluated independently of the library.
fn criterion_1() -> Outcome {
    let grid = make_grid(30.0, 4096).unwrap();
    let start = Instant::now();
    let prob = MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 4.0), DivisorData::empty()).unwrap();
    let report = solve_ke_ode(&prob, 1e-10, DEFAULT_MAX_ITER).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let mut err = 0.0f64;
    for i in 0..grid.len() {
        let t = grid.node(i);
        if t.abs() <= 28.0 {
            let exact = 2.0 * (t.max(0.0) + (-t.abs()).exp().ln_1p()) - std::f64::consts::PI.ln();
            err = err.max((report.solution.value(i) - exact).abs());
        }
    }
    outcome(
        err <= ORACLE_TOL && elapsed < 1.0,
        format!("sup error {err:.2e} (tol {ORACLE_TOL:.0e}), {elapsed:.3}s (limit 1s)"),
    )
}

fn criterion_2() -> Outcome {
    let grid = make_grid(30.0, 4096).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for p in [2usize, 3, 5] {
        for (tag, divisor) in [("smooth", DivisorData::empty()), ("conic", half())] {
            let start = Instant::now();
            let cfg = RicciConfig::new(RadialWeight::fubini_study(grid, 4.0), divisor, p).unwrap();
            let c = (p as f64 - 1.0) / p as f64;
            let (ok, worst, env) = match run_ricci(cfg, 1000, GAP_FLOOR) {
                Ok((_, trace)) => {
                    let mut worst = 0.0f64;
                    for (i, r) in trace.ratios.iter().enumerate() {
                        if trace.gaps[i + 1] >= GAP_FLOOR {
                            worst = worst.max(*r);
                        }
                    }
                    let g1 = trace.gaps[0];
                    let env = trace
                        .gaps
                        .iter()
                        .enumerate()
                        .map(|(m, g)| g / (c.powi(m as i32) * g1))
                        .fold(0.0f64, f64::max);
                    (worst <= c + RATIO_SLACK && env <= 1.0 + ENVELOPE_SLACK, worst, env)
                }
                Err(_) => (false, f64::NAN, f64::NAN),
            };
            let secs = start.elapsed().as_secs_f64();
            passed &= ok && secs < 30.0;
            parts.push(format!("p={p} {tag}: r≤{worst:.5} env {env:.5} {secs:.1}s"));
        }
    }
    outcome(passed, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let grid = make_grid(30.0, 4096).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for (tag, divisor) in [("smooth", DivisorData::empty()), ("conic", half())] {
        let a0 = divisor.coefficient(FixedPoint::Zero, 0.0);
        let cfg = RicciConfig::new(RadialWeight::fubini_study(grid, 4.0), divisor, 2).unwrap();
        let (state, _) = run_ricci(cfg.clone(), 1000, GAP_FLOOR).unwrap();
        let res = fixed_point_residual(&state).unwrap();
        let ke = solve_ke_ode(&cfg.ke_problem().unwrap(), 1e-10, DEFAULT_MAX_ITER).unwrap();
        let cmp = compare_to_ke(&state, &ke).unwrap();
        let lelong = (cmp.lelong_difference.0 - a0).abs().max(cmp.lelong_difference.1.abs());
        passed &= res <= FIXED_POINT_TOL && cmp.sup_distance <= KE_TOL && lelong <= 1e-6;
        parts.push(format!(
            "{tag}: residual {res:.2e}, distance {:.2e}, Lelong offset error {lelong:.1e}",
            cmp.sup_distance
        ));
    }
    outcome(passed, parts.join("; "))
}

// 2π ∫ e^{(j+1)t} (1 + e^t)^{-4} dt = 2π B(j+1, 3−j) = 2π j! (2−j)! / 3!.
fn criterion_4() -> Outcome {
    let setup = BergmanSetup {
        k: 4.0,
        divisor: DivisorData::empty(),
        p: 1,
        stage: RicciStage::Step(1),
        levels: 3,
        half_width: 80.0,
        nodes: 8192,
        eps: 0.0,
    };
    let run = run_bergman(&setup).unwrap();
    let basis = section_range(1, 1, 4.0, &DivisorData::empty()).unwrap();
    let g = gram_diagonal(&basis, &run.chain, None).unwrap();
    let fact = |n: usize| (1..=n).product::<usize>() as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let err = (0..3)
        .map(|j| {
            let exact = two_pi * fact(j) * fact(2 - j) / fact(3);
            ((g[j] - exact) / exact).abs()
        })
        .fold(0.0f64, f64::max);
    outcome(err <= GRAM_TOL, format!("max relative error {err:.2e} (tol {GRAM_TOL:.0e})"))
}

struct BergmanPair {
    smooth: BergmanRun,
    conic: BergmanRun,
    seconds: f64,
}

fn bergman_runs() -> BergmanPair {
    let start = Instant::now();
    let smooth = run_bergman(&BergmanSetup {
        k: 4.0,
        divisor: DivisorData::empty(),
        p: 1,
        stage: RicciStage::Step(1),
        levels: 200,
        half_width: 80.0,
        nodes: 8192,
        eps: 0.0,
    })
    .unwrap();
    let conic = run_bergman(&BergmanSetup {
        k: 4.0,
        divisor: half(),
        p: 2,
        stage: RicciStage::Converged { stop_tol: 1e-10, m_max: 500 },
        levels: 200,
        half_width: 80.0,
        nodes: 8192,
        eps: 0.0,
    })
    .unwrap();
    BergmanPair {
        smooth,
        conic,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn criterion_5(runs: &BergmanPair) -> Outcome {
    let mut passed = runs.seconds < 300.0;
    let mut parts = Vec::new();
    for (tag, run, bound) in [("smooth", &runs.smooth, SMOOTH_DISTANCE), ("conic", &runs.conic, CONIC_DISTANCE)] {
        let conv = convergence_check(&run.levels, &run.chain, (-10.0, 10.0)).unwrap();
        let d = conv.distances[199];
        let monotone = conv.distances[19..].windows(2).all(|w| w[1] <= w[0]);
        passed &= d <= bound && monotone;
        parts.push(format!("{tag}: d(200) = {d:.4} (≤ {bound}), monotone from 20: {monotone}"));
    }
    if let Some(cross) = runs.conic.cross_route_distance {
        passed &= cross <= KE_TOL;
    }
    parts.push(format!("{:.1}s (limit 300s)", runs.seconds));
    outcome(passed, parts.join("; "))
}

fn criterion_6(runs: &BergmanPair) -> Outcome {
    let mut passed = true;
    let mut worst = f64::NEG_INFINITY;
    for run in [&runs.smooth, &runs.conic] {
        let report = integral_chain_check(&run.levels, &run.chain).unwrap();
        for c in &report.certificates {
            let excess = c.log_lhs - c.log_rhs;
            worst = worst.max(excess);
            passed &= excess <= CHAIN_TOL.ln_1p();
        }
    }
    let dims = runs
        .smooth
        .levels
        .iter()
        .all(|l| l.basis.dimension() == l.level() + 1 + l.level());
    passed &= dims;
    outcome(
        passed,
        format!("worst log-excess {worst:.2e} (tol {CHAIN_TOL:.0e}); N_ℓ = 2ℓ+1 for p=1, k=4: {dims}"),
    )
}

fn criterion_7() -> Outcome {
    let grid = make_grid(30.0, 4096).unwrap();
    let prob = MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 4.0), DivisorData::empty()).unwrap();
    let report = solve_ke_ode(&prob, 1e-10, DEFAULT_MAX_ITER).unwrap();
    let check = maximizer_check(&prob, &report, 100, 0.1, 20_240_601).unwrap();
    let bg = &prob.background;
    let phi: Vec<f64> = grid.nodes().iter().map(|t| 0.3 / (1.0 + t * t)).collect();
    let v: Vec<f64> = grid.nodes().iter().map(|t| (-(t - 1.0).powi(2)).exp()).collect();
    let s = 1e-5;
    let at = |x: f64| -> Vec<f64> { phi.iter().zip(&v).map(|(a, b)| a + x * b).collect() };
    let fd = (energy(bg, &at(s)).unwrap() - energy(bg, &at(-s)).unwrap()) / (2.0 * s);
    let fv_err = (fd - energy_first_variation(bg, &phi, &v).unwrap()).abs().max(check.first_variation_error);
    outcome(
        check.worst_increase <= 0.0 && fv_err <= FIRST_VARIATION_TOL,
        format!(
            "max G increase over 100 perturbations {:.2e}; first variation error {fv_err:.2e} (tol {FIRST_VARIATION_TOL:.0e})",
            check.worst_increase
        ),
    )
}

fn criterion_8() -> Outcome {
    let grid = make_grid(30.0, 4096).unwrap();
    let schedule: Vec<f64> = (0..=10).map(|i| 0.1 * 0.5f64.powi(i)).collect();
    let mut passed = true;
    let mut parts = Vec::new();
    let fs = RadialWeight::fubini_study(grid, 4.0);
    for (tag, twist) in [("smooth", fs.clone()), ("kinked", &fs + &RadialWeight::kink(grid, 0.0))] {
        let prob = MAProblem::kahler_einstein(twist, DivisorData::empty()).unwrap();
        let exact = solve_ke_ode(&prob, 1e-10, DEFAULT_MAX_ITER).unwrap();
        let diag =
            regularized_diagonal(&prob, RegularizationScheme::TwistSmoothing, &schedule, &schedule, 1e-10).unwrap();
        let d = diag.distance_to(&exact);
        passed &= d < DIAGONAL_TOL;
        parts.push(format!("{tag}: {d:.2e}"));
    }
    outcome(passed, format!("{} (tol {DIAGONAL_TOL:.0e})", parts.join(", ")))
}

fn accepted_recipes() -> Vec<(&'static str, FamilyRecipe)> {
    vec![
        ("product", FamilyRecipe::Product { k: 4.0 }),
        ("bump", FamilyRecipe::Perturbed { k: 4.0, lambda: 0.5, profile: Profile::Bump }),
        ("lorentzian", FamilyRecipe::Perturbed { k: 4.0, lambda: 0.05, profile: Profile::Lorentzian }),
        (
            "softplus-product",
            FamilyRecipe::Perturbed { k: 4.0, lambda: 0.05, profile: Profile::SoftplusProduct },
        ),
        ("conic", FamilyRecipe::Conic { k: 4.0, a0: 0.5, lambda: 0.5, profile: Profile::Bump }),
    ]
}

fn base() -> BaseGrid {
    BaseGrid::new(-2.0, 2.0, 41).unwrap()
}

fn criterion_9() -> Outcome {
    let fiber = make_grid(30.0, 1024).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for (tag, recipe) in accepted_recipes() {
        let family = build_family(recipe, base(), fiber).unwrap();
        let rel = solve_fiberwise(&family, 1e-10).unwrap();
        let cert = base_positivity_check(&rel, POSITIVITY_TOL).unwrap();
        passed &= cert.passed;
        parts.push(format!("{tag} {:.1e}", cert.worst_scaled_det.min(cert.worst_scaled_tt)));
    }
    let control = FamilyRecipe::Perturbed { k: 4.0, lambda: -0.5, profile: Profile::Bump };
    let family = build_family_with(control, base(), fiber, true).unwrap();
    let cert = base_positivity_check(&solve_fiberwise(&family, 1e-10).unwrap(), POSITIVITY_TOL).unwrap();
    passed &= !cert.passed;
    parts.push(format!("control fails: {} (min det {:.2e})", !cert.passed, cert.min_det));
    outcome(passed, format!("worst scaled minima: {}", parts.join(", ")))
}

fn criterion_10() -> Outcome {
    let fiber = make_grid(30.0, 1024).unwrap();
    let mut passed = true;
    let mut worst_ns = f64::INFINITY;
    let mut worst_drift = 0.0f64;
    let mut count = 0;
    for (_, recipe) in accepted_recipes() {
        let family = build_family(recipe, base(), fiber).unwrap();
        for m in 1..=3 {
            for j in admissible_exponents(m, &family) {
                let cert = ns_convexity_check(j, m, &family).unwrap();
                worst_ns = worst_ns.min(cert.min_second_difference);
                passed &= cert.min_second_difference >= -NS_TOL;
                count += 1;
            }
        }
        let coarse = uniform_sup_check(&solve_fiberwise(&family, 1e-10).unwrap(), (-2.0, 2.0)).unwrap();
        let fine_family = build_family(recipe, base(), fiber.refined()).unwrap();
        let fine = uniform_sup_check(&solve_fiberwise(&fine_family, 1e-10).unwrap(), (-2.0, 2.0)).unwrap();
        passed &= coarse.bound.is_finite();
        worst_drift = worst_drift.max((coarse.bound - fine.bound).abs());
    }
    passed &= worst_drift <= DRIFT_TOL;
    outcome(
        passed,
        format!(
            "{count} (j, m) pairs, min second difference {worst_ns:.2e} (tol -{NS_TOL:.0e}); sup drift {worst_drift:.2e} (tol {DRIFT_TOL:.0e})"
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

#[test]
fn acceptance_criteria() {
    let names = [
        "closed-form oracle",
        "Ricci contraction",
        "limit identification",
        "Gram oracle",
        "Bergman convergence",
        "integral chain",
        "variational maximizer",
        "regularization stability",
        "relative positivity",
        "NS convexity and uniform bound",
    ];
    let mut results = vec![
        guarded(criterion_1),
        guarded(criterion_2),
        guarded(criterion_3),
        guarded(criterion_4),
    ];
    match catch_unwind(bergman_runs) {
        Ok(runs) => {
            results.push(guarded(|| criterion_5(&runs)));
            results.push(guarded(|| criterion_6(&runs)));
        }
        Err(_) => {
            results.push(outcome(false, "Bergman runs panicked".into()));
            results.push(outcome(false, "Bergman runs panicked".into()));
        }
    }
    results.push(guarded(criterion_7));
    results.push(guarded(criterion_8));
    results.push(guarded(criterion_9));
    results.push(guarded(criterion_10));
    let mut err = std::io::stderr().lock();
    for (i, (name, r)) in names.iter().zip(&results).enumerate() {
        let _ = writeln!(
            err,
            "criterion {:>2} [{}] {name}: {}",
            i + 1,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, r)| !r.passed).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
