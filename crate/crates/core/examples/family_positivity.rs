// Fiberwise Kähler-Einstein solves over a perturbed family and the joint
// positivity certificate of the relative weight, with a failing control.

use kelab::family::{
    base_positivity_check, build_family, build_family_with, solve_fiberwise, uniform_sup_check, BaseGrid,
    FamilyRecipe, PositivityCertificate, Profile, POSITIVITY_TOL,
};
use kelab::make_grid;
use kelab::solver::DEFAULT_TOL;

pub fn run_example() -> (PositivityCertificate, PositivityCertificate) {
    let fiber = make_grid(30.0, 1024).unwrap();
    let base = BaseGrid::new(-2.0, 2.0, 41).unwrap();
    let recipe = FamilyRecipe::Perturbed { k: 4.0, lambda: 0.5, profile: Profile::Bump };
    let family = build_family(recipe, base, fiber).unwrap();
    let rel = solve_fiberwise(&family, DEFAULT_TOL).unwrap();
    let good = base_positivity_check(&rel, POSITIVITY_TOL).unwrap();
    let sup = uniform_sup_check(&rel, (-2.0, 2.0)).unwrap();
    println!("perturbed: min det {:.3e} at {:?}, min tt {:.3e}, sup bound {:.6}", good.min_det, good.min_det_at, good.min_tt, sup.bound);

    let control = FamilyRecipe::Perturbed { k: 4.0, lambda: -0.5, profile: Profile::Bump };
    let family = build_family_with(control, base, fiber, true).unwrap();
    let rel = solve_fiberwise(&family, DEFAULT_TOL).unwrap();
    let bad = base_positivity_check(&rel, POSITIVITY_TOL).unwrap();
    println!("control: min det {:.3e} at {:?}, passed {}", bad.min_det, bad.min_det_at, bad.passed);
    (good, bad)
}

#[allow(dead_code)]
fn main() {
    let (good, bad) = run_example();
    assert!(good.passed && !bad.passed);
}
