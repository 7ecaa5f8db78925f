// Narasimhan-Simha norms of monomials over a perturbed family and the
// convexity of `s ↦ −log‖z^j‖²`.

use kelab::family::{admissible_exponents, build_family, ns_convexity_check, BaseGrid, FamilyRecipe, Profile};
use kelab::make_grid;

pub fn run_example() -> f64 {
    let family = build_family(
        FamilyRecipe::Perturbed { k: 4.0, lambda: 0.5, profile: Profile::Bump },
        BaseGrid::new(-2.0, 2.0, 41).unwrap(),
        make_grid(40.0, 4096).unwrap(),
    )
    .unwrap();
    let mut worst = f64::INFINITY;
    for m in 1..=3 {
        for j in admissible_exponents(m, &family) {
            let cert = ns_convexity_check(j, m, &family).unwrap();
            worst = worst.min(cert.min_second_difference);
        }
        println!("m = {m}: exponents {:?}", admissible_exponents(m, &family));
    }
    println!("smallest second difference of -log|z^j|^2: {worst:.4e}");
    worst
}

#[allow(dead_code)]
fn main() {
    run_example();
}
