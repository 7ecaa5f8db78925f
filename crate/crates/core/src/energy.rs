//! Energy functionals of relative potentials.
//!
//! For a background `χ` with discrete curvature `b = χ''` and a bounded
//! relative potential `φ`, the dimension-one energy is
//! `E(φ) = ½ ∫ φ (2b + φ'') dt`, and
//! `G(φ) = E(φ) / M − log ∫ e^φ dμ` with `M = ∫ b dt`. Dividing by the mass makes
//! `G` invariant under `φ ↦ φ + const`, so its maximizers are exactly the
//! solutions of `(χ + φ)'' = M e^φ μ / ∫ e^φ dμ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::radial::{neumann_second_difference, RadialGrid, RadialWeight};
use crate::solver::{MAProblem, SolveReport};

/// Finite measure on the grid given by a nodal density against `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialMeasure {
    grid: RadialGrid,
    log_density: Vec<f64>,
}

impl RadialMeasure {
    /// Measure with density `exp(log_density)`.
    pub fn from_log_density(grid: RadialGrid, log_density: Vec<f64>) -> Result<Self> {
        if log_density.len() != grid.len() {
            return Err(Error::invalid("log_density", "length differs from the grid"));
        }
        if log_density.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::invalid("log_density", "density must be finite"));
        }
        Ok(RadialMeasure { grid, log_density })
    }

    pub fn from_density(grid: RadialGrid, density: &[f64]) -> Result<Self> {
        if density.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("density", "must be finite and nonnegative"));
        }
        Self::from_log_density(grid, density.iter().map(|x| x.ln()).collect())
    }

    /// The reference measure `μ` of a problem: its right-hand side is `e^v μ`.
    pub fn of_problem(prob: &MAProblem) -> Self {
        RadialMeasure {
            grid: *prob.grid(),
            log_density: prob.log_density(),
        }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    /// `log ∫ e^φ dμ` by trapezoid quadrature in log space.
    pub fn log_integral_exp(&self, phi: &[f64]) -> f64 {
        let w = self.grid.trapezoid_weights();
        log_sum_exp((0..self.grid.len()).map(|i| phi[i] + self.log_density[i] + w[i].ln()))
    }

    pub fn total_mass(&self) -> f64 {
        self.log_integral_exp(&vec![0.0; self.grid.len()]).exp()
    }

    /// Same measure rescaled to total mass 1.
    pub fn normalized(&self) -> Self {
        let shift = self.log_integral_exp(&vec![0.0; self.grid.len()]);
        RadialMeasure {
            grid: self.grid,
            log_density: self.log_density.iter().map(|x| x - shift).collect(),
        }
    }
}

fn check_potential(background: &RadialWeight, phi: &[f64]) -> Result<()> {
    if phi.len() != background.grid().len() {
        return Err(Error::invalid("phi", "length differs from the grid"));
    }
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("phi", "relative potential must be bounded"));
    }
    Ok(())
}

/// `E(φ) = ½ ∫ φ (2χ'' + φ'') dt`, with Neumann second differences for `φ''`.
pub fn energy(background: &RadialWeight, phi: &[f64]) -> Result<f64> {
    check_potential(background, phi)?;
    let grid = background.grid();
    let h = grid.spacing();
    let w = grid.trapezoid_weights();
    let b = background.curvature();
    Ok(0.5
        * (0..grid.len())
            .map(|i| w[i] * phi[i] * (2.0 * b[i] + neumann_second_difference(phi, i, h)))
            .sum::<f64>())
}

/// `∫ v (χ + φ)'' dt`, the derivative of [`energy`] at `φ` in direction `v`.
pub fn energy_first_variation(background: &RadialWeight, phi: &[f64], direction: &[f64]) -> Result<f64> {
    check_potential(background, phi)?;
    check_potential(background, direction)?;
    let grid = background.grid();
    let h = grid.spacing();
    let w = grid.trapezoid_weights();
    let b = background.curvature();
    Ok((0..grid.len())
        .map(|i| w[i] * direction[i] * (b[i] + neumann_second_difference(phi, i, h)))
        .sum())
}

/// Discrete mass `∫ χ'' dt` used to normalize [`g_functional`].
pub fn background_mass(background: &RadialWeight) -> f64 {
    background.grid().integrate(background.curvature())
}

/// `G(φ) = E(φ) / M − log ∫ e^φ dμ`.
pub fn g_functional(background: &RadialWeight, phi: &[f64], mu: &RadialMeasure) -> Result<f64> {
    if mu.grid() != background.grid() {
        return Err(Error::Mismatch("measure and background live on different grids".into()));
    }
    let mass = background_mass(background);
    if mass <= 0.0 {
        return Err(Error::Configuration(format!("background mass must be positive, got {mass}")));
    }
    let l = mu.log_integral_exp(phi);
    if !l.is_finite() {
        return Err(Error::Configuration("measure has zero or infinite mass".into()));
    }
    Ok(energy(background, phi)? / mass - l)
}

/// Smooth random bump field with sup norm exactly `amplitude`.
pub fn random_perturbation(grid: &RadialGrid, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-6.0..6.0),
                rng.random_range(0.5..3.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let raw: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|t| bumps.iter().map(|(c, w, a)| a * (-((t - c) / w).powi(2)).exp()).sum())
        .collect();
    let sup = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sup == 0.0 {
        return raw;
    }
    raw.iter().map(|x| x * amplitude / sup).collect()
}

/// Outcome of probing `G` around a solved relative potential.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximizerCheck {
    pub g_value: f64,
    /// `max_ψ G(φ + ψ) − G(φ)`; nonpositive at a maximizer.
    pub worst_increase: f64,
    /// `max_ψ |dG/ds(φ + sψ)|` at `s = 0`, by central differences; small but
    /// limited by the mismatch between the solver stencil and the energy stencil.
    pub stationarity: f64,
    /// `max_ψ |dE/ds − ∫ ψ (χ + φ)''|` at `s = 0`.
    pub first_variation_error: f64,
    pub perturbations: usize,
    pub seed: u64,
}

/// Evaluates `G` at `count` seeded perturbations of sup norm `≤ amplitude`.
pub fn maximizer_check(prob: &MAProblem, report: &SolveReport, count: usize, amplitude: f64, seed: u64) -> Result<MaximizerCheck> {
    let mu = RadialMeasure::of_problem(prob);
    let bg = &prob.background;
    let phi = &report.correction;
    let g_value = g_functional(bg, phi, &mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_increase = f64::NEG_INFINITY;
    let mut stationarity = 0.0f64;
    let mut first_variation_error = 0.0f64;
    let h = 1e-4;
    for _ in 0..count {
        let psi = random_perturbation(bg.grid(), rng.random_range(0.01..=amplitude), &mut rng);
        let shifted = |s: f64| -> Vec<f64> { phi.iter().zip(&psi).map(|(a, b)| a + s * b).collect() };
        worst_increase = worst_increase.max(g_functional(bg, &shifted(1.0), &mu)? - g_value);
        let unit: Vec<f64> = {
            let sup = psi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            psi.iter().map(|x| x / sup).collect()
        };
        let along = |s: f64| -> Vec<f64> { phi.iter().zip(&unit).map(|(a, b)| a + s * b).collect() };
        let d = (g_functional(bg, &along(h), &mu)? - g_functional(bg, &along(-h), &mu)?) / (2.0 * h);
        stationarity = stationarity.max(d.abs());
        let de = (energy(bg, &along(h))? - energy(bg, &along(-h))?) / (2.0 * h);
        first_variation_error = first_variation_error.max((de - energy_first_variation(bg, phi, &unit)?).abs());
    }
    Ok(MaximizerCheck {
        g_value,
        worst_increase,
        stationarity,
        first_variation_error,
        perturbations: count,
        seed,
    })
}
