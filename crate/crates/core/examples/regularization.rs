// The `(δ_ε, ε)` diagonal for a kinked twist: every step is a smooth problem,
// and the last one lands on the unregularized solution.

use kelab::solver::{
    regularized_diagonal, solve_ke_ode, MAProblem, RegularizationScheme, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use kelab::{make_grid, DivisorData, RadialWeight};

pub fn run_example() -> f64 {
    let grid = make_grid(30.0, 4096).unwrap();
    let twist = &RadialWeight::fubini_study(grid, 4.0) + &RadialWeight::kink(grid, 0.0);
    let prob = MAProblem::kahler_einstein(twist, DivisorData::empty()).unwrap();
    let exact = solve_ke_ode(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let schedule: Vec<f64> = (0..=10).map(|i| 0.1 * 0.5f64.powi(i)).collect();
    let diag = regularized_diagonal(&prob, RegularizationScheme::TwistSmoothing, &schedule, &schedule, DEFAULT_TOL).unwrap();
    for (step, d) in diag.steps.iter().skip(1).zip(&diag.trace) {
        println!("eps {:.5}  step distance {:.3e}", step.eps, d);
    }
    let d = diag.distance_to(&exact);
    println!("distance to the unregularized solution {d:.3e}");
    d
}

#[allow(dead_code)]
fn main() {
    run_example();
}
