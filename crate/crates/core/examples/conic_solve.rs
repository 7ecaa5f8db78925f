// Solve with a cone point of angle `π` at 0 and the measured Lelong numbers.

use kelab::solver::{solve_ke_ode, MAProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use kelab::{make_grid, DivisorData, FixedPoint, RadialWeight};

pub fn run_example() -> (f64, f64) {
    let grid = make_grid(30.0, 4096).unwrap();
    let divisor = DivisorData::point(FixedPoint::Zero, 0.5).unwrap();
    let prob = MAProblem::kahler_einstein(RadialWeight::fubini_study(grid, 4.0), divisor).unwrap();
    let report = solve_ke_ode(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let lelong = report.lelong_numbers();
    println!(
        "mass {:.10} (target {}), Lelong numbers at 0 and ∞: {:.8}, {:.8}",
        report.mass_target - report.mass_defect,
        report.mass_target,
        lelong.0,
        lelong.1
    );
    report.solution.write_csv(std::io::sink()).unwrap();
    lelong
}

#[allow(dead_code)]
fn main() {
    run_example();
}
