// The solved relative potential maximizes `G = E/M − log ∫ e^φ dμ`.

use kelab::energy::{maximizer_check, MaximizerCheck};
use kelab::solver::{solve_ke_ode, MAProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use kelab::{make_grid, DivisorData, FixedPoint, RadialWeight};

pub fn run_example() -> MaximizerCheck {
    let grid = make_grid(30.0, 4096).unwrap();
    let divisor = DivisorData::point(FixedPoint::Infinity, 0.3).unwrap();
    let prob = MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 5.0), divisor).unwrap();
    let report = solve_ke_ode(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let check = maximizer_check(&prob, &report, 100, 0.1, 42).unwrap();
    println!(
        "G = {:.10}, largest increase {:.3e}, energy first-variation error {:.3e}",
        check.g_value, check.worst_increase, check.first_variation_error
    );
    check
}

#[allow(dead_code)]
fn main() {
    run_example();
}
