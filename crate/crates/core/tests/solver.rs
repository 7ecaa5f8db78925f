use kelab::solver::{
    delta_monotonicity, regularized_diagonal, regularized_problem, solve_ke_ode, uniform_bound_check, MAProblem,
    RegularizationScheme, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use kelab::{make_grid, DivisorComponent, DivisorData, FixedPoint, RadialWeight};

fn zariski_base() -> MAProblem {
    let grid = make_grid(30.0, 2049).unwrap();
    let divisor = DivisorData::new(vec![DivisorComponent { point: FixedPoint::Zero, coefficient: 0.5, perturbation: 0.5 }]).unwrap();
    MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 4.0), divisor).unwrap()
}

#[test]
fn delta_family_is_monotone_after_shift() {
    let base = zariski_base();
    let deltas = [0.1, 0.05, 0.02, 0.01, 0.0];
    let reports: Vec<_> = deltas
        .iter()
        .map(|&d| {
            let p = regularized_problem(&base, RegularizationScheme::Zariski, d, 0.0).unwrap();
            solve_ke_ode(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap()
        })
        .collect();
    let members: Vec<_> = deltas.iter().copied().zip(reports.iter()).collect();
    let m = delta_monotonicity(&members).unwrap();
    println!("shift {} violation {}", m.k_shift, m.max_violation);
    assert!(m.max_violation <= 1e-9);
    let bound = uniform_bound_check(&reports).unwrap();
    assert!(bound.bound.is_finite());
}

#[test]
fn fs_delta_family_has_uniform_bound() {
    let grid = make_grid(30.0, 2049).unwrap();
    let base = MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 4.0), DivisorData::empty()).unwrap();
    let reports: Vec<_> = [0.1, 0.05, 0.01]
        .iter()
        .map(|&d| {
            let p = regularized_problem(&base, RegularizationScheme::TwistSmoothing, d, 0.0).unwrap();
            solve_ke_ode(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap()
        })
        .collect();
    let b = uniform_bound_check(&reports).unwrap();
    assert_eq!(b.per_member.len(), 3);
    assert_eq!(uniform_bound_check(&reports[..1]).unwrap().bound, reports[0].relative_sup());
    assert!(uniform_bound_check(&[]).is_err());
}

#[test]
fn conic_diagonal_approaches_the_cone_solution() {
    let base = zariski_base();
    let exact = solve_ke_ode(&base, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let schedule: Vec<f64> = (0..=10).map(|i| 0.1 * 0.5f64.powi(i)).collect();
    let diag = regularized_diagonal(&base, RegularizationScheme::Zariski, &schedule, &schedule, DEFAULT_TOL).unwrap();
    println!("trace {:?} distance {}", diag.trace, diag.distance_to(&exact));
    assert!(diag.distance_to(&exact) < diag.steps[0].report.correction.iter().zip(&exact.correction).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())));
}

#[test]
fn empty_schedule_is_rejected() {
    let base = zariski_base();
    assert!(regularized_diagonal(&base, RegularizationScheme::Zariski, &[], &[0.1], DEFAULT_TOL).is_err());
    assert!(regularized_diagonal(&base, RegularizationScheme::Zariski, &[0.1], &[], DEFAULT_TOL).is_err());
}
