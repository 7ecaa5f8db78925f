//! Radial Kähler-Einstein laboratory on the Riemann sphere.
//!
//! Rotation-invariant weights are profiles `u(t)` in `t = log|z|²`; on that
//! reduction the twisted Kähler-Einstein equation becomes a semilinear ODE and
//! every Bergman Gram matrix is diagonal in the monomial basis. The crate
//! solves the equation directly ([`solver`]), by the `p`-step Ricci iteration
//! ([`ricci`]) and by Bergman-kernel iteration ([`bergman`]), and checks the
//! relative positivity statements over one-parameter families ([`family`]).
//!
//! Conventions are pinned in `CONVENTIONS.md`; its SHA-256 travels with every
//! serialized record as [`convention_hash`].

pub mod bergman;
pub mod energy;
pub mod error;
pub mod family;
pub mod io;
pub mod numeric;
pub mod radial;
pub mod runner;
pub mod ricci;
pub mod solver;

pub use error::{Error, Result};
pub use radial::{
    divisor_frame_norm, fs_weight, lelong_numbers, make_grid, mollify_weight, weight_mass, DivisorComponent,
    DivisorData, FixedPoint, Kink, RadialGrid, RadialWeight, WeightRecord,
};

/// The conventions document embedded at build time.
pub const CONVENTIONS: &str = include_str!("../CONVENTIONS.md");

/// Hex SHA-256 of [`CONVENTIONS`].
pub fn convention_hash() -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(CONVENTIONS.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Crate version recorded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
