// Direct solve of the twisted Kähler-Einstein equation for a Fubini-Study
// twist, compared with the closed form `2 log(1 + e^t) − log π` at `k = 4`.

use kelab::solver::{fubini_study_solution, solve_ke_ode, MAProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use kelab::{make_grid, DivisorData, RadialWeight};

pub fn run_example() -> f64 {
    let grid = make_grid(30.0, 4096).unwrap();
    let prob = MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 4.0), DivisorData::empty()).unwrap();
    let report = solve_ke_ode(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let exact = fubini_study_solution(grid, 4.0);
    let err = report.solution.sup_distance_on(&exact, grid.window(-28.0, 28.0));
    println!("newton steps {}, residual {:.2e}, sup error {:.2e}", report.iterations, report.residual, err);
    err
}

#[allow(dead_code)]
fn main() {
    run_example();
}
