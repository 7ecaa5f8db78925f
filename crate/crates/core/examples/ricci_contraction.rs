// p-step Ricci iteration: gaps contract at rate `(p−1)/p` and the limit
// matches a direct solve after the `log p` shift.

use kelab::ricci::{compare_to_ke, run_ricci, RicciConfig, RicciTrace};
use kelab::solver::{solve_ke_ode, DEFAULT_MAX_ITER, DEFAULT_TOL};
use kelab::{make_grid, DivisorData, FixedPoint, RadialWeight};

pub fn run_example() -> Vec<(usize, RicciTrace, f64)> {
    let grid = make_grid(30.0, 2048).unwrap();
    let divisor = DivisorData::point(FixedPoint::Zero, 0.5).unwrap();
    let mut out = Vec::new();
    for p in [2, 3] {
        let cfg = RicciConfig::new(RadialWeight::fubini_study(grid, 4.0), divisor.clone(), p).unwrap();
        let (state, trace) = run_ricci(cfg.clone(), 300, 1e-10).unwrap();
        let ke = solve_ke_ode(&cfg.ke_problem().unwrap(), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let cmp = compare_to_ke(&state, &ke).unwrap();
        let worst = trace.ratios.iter().copied().fold(0.0, f64::max);
        println!("p = {p}: {} steps, worst ratio {worst:.6}, distance to direct solve {:.2e}", state.m, cmp.sup_distance);
        out.push((p, trace, cmp.sup_distance));
    }
    out
}

#[allow(dead_code)]
fn main() {
    run_example();
}
