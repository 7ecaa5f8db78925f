// Bergman kernel iteration against the first Ricci iterate: renormalized
// log-kernels approach the target and the integral chain holds level by level.

use kelab::bergman::{
    convergence_check, integral_chain_check, run_bergman, BergmanSetup, ConvergenceTrace, RicciStage,
    DEFAULT_HALF_WIDTH, DEFAULT_NODES,
};
use kelab::DivisorData;

pub fn run_example() -> ConvergenceTrace {
    let setup = BergmanSetup {
        k: 4.0,
        divisor: DivisorData::empty(),
        p: 2,
        stage: RicciStage::Step(1),
        levels: 40,
        half_width: DEFAULT_HALF_WIDTH,
        nodes: DEFAULT_NODES,
        eps: 0.0,
    };
    let run = run_bergman(&setup).unwrap();
    let conv = convergence_check(&run.levels, &run.chain, (-10.0, 10.0)).unwrap();
    let chain = integral_chain_check(&run.levels, &run.chain).unwrap();
    for l in [1usize, 5, 10, 20, 40] {
        println!(
            "level {l:>3}: N = {:>3}, distance {:.4}, chain slack {:.2e}",
            run.levels[l - 1].basis.dimension(),
            conv.distances[l - 1],
            chain.certificates[l - 1].slack
        );
    }
    conv
}

#[allow(dead_code)]
fn main() {
    run_example();
}
