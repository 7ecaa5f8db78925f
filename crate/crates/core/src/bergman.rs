//! Bergman-kernel iteration in log form.
//!
//! On the sphere the sections of `ℓ(K + L_p)` are the monomials `z^j`,
//! `j_min ≤ j ≤ j_max`, and rotation invariance makes their Gram matrix
//! diagonal:
//!
//! ```text
//! G_j = 2π ∫ exp((j+1)t − κ_{ℓ−1}(t) − τ(t)) dt,     κ_ℓ(t) = log Σ_j e^{jt} / G_j.
//! ```
//!
//! Everything is kept in logarithms; kernels at level 200 span hundreds of
//! orders of magnitude.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::numeric::{ln_factorial, log_add_exp, log_sum_exp, softplus};
use crate::radial::{make_grid, DivisorData, FixedPoint, RadialGrid, RadialWeight};
use crate::ricci::{run_ricci, ricci_step, RicciConfig, RicciState};

/// Integrand at `±T` must be below this fraction of its peak.
pub const DECAY_GUARD: f64 = 1e-30;
/// Relative slack of the finite-level integral chain.
pub const CHAIN_SLACK: f64 = 1e-8;
/// Default Bergman grid: `T = 80`, `N = 8192`.
pub const DEFAULT_HALF_WIDTH: f64 = 80.0;
pub const DEFAULT_NODES: usize = 8192;

const CEIL_TOL: f64 = 1e-9;
const SLOPE_TOL: f64 = 1e-6;

fn ceil_tol(x: f64) -> i64 {
    (x - CEIL_TOL).ceil() as i64
}

/// Monomial basis of `H^0(ℓ(K + L_p))` vanishing to order `ℓp a_i` along `pE`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionBasis {
    pub level: usize,
    pub p: usize,
    /// `ℓ · p(k − 2)`.
    pub level_degree: i64,
    pub j_min: i64,
    pub j_max: i64,
    /// Fractional parts `(⌈ℓp a_0⌉ − ℓp a_0, ⌈ℓp a_∞⌉ − ℓp a_∞)`.
    pub fractional: (f64, f64),
}

impl SectionBasis {
    /// `N_ℓ = j_max − j_min + 1`.
    pub fn dimension(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }

    pub fn exponents(&self) -> std::ops::RangeInclusive<i64> {
        self.j_min..=self.j_max
    }

    /// `log |S_E|^{2{ℓp}}` with Fubini-Study frames.
    pub fn fractional_log_frame(&self, t: f64) -> f64 {
        self.fractional.0 * FixedPoint::Zero.log_frame_norm(t) + self.fractional.1 * FixedPoint::Infinity.log_frame_norm(t)
    }
}

/// Exponent range of level `ℓ` for twist degree `k` and divisor `E`.
pub fn section_range(level: usize, p: usize, k: f64, divisor: &DivisorData) -> Result<SectionBasis> {
    if level == 0 {
        return Err(Error::invalid("level", "levels start at 1"));
    }
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    let d1 = p as f64 * (k - 2.0);
    if (d1 - d1.round()).abs() > CEIL_TOL || d1.round() < 1.0 {
        return Err(Error::Configuration(format!(
            "p(k − 2) = {d1} must be a positive integer"
        )));
    }
    let lp = (level * p) as f64;
    let a0 = divisor.coefficient(FixedPoint::Zero, 0.0);
    let ainf = divisor.coefficient(FixedPoint::Infinity, 0.0);
    let level_degree = level as i64 * d1.round() as i64;
    let c0 = ceil_tol(lp * a0);
    let cinf = ceil_tol(lp * ainf);
    let basis = SectionBasis {
        level,
        p,
        level_degree,
        j_min: c0,
        j_max: level_degree - cinf,
        fractional: ((c0 as f64 - lp * a0).max(0.0), (cinf as f64 - lp * ainf).max(0.0)),
    };
    if basis.j_max < basis.j_min {
        return Err(Error::Configuration(format!(
            "no sections at level {level}: j_min = {} > j_max = {}",
            basis.j_min, basis.j_max
        )));
    }
    Ok(basis)
}

/// Metric data of one outer step `m`: the weight `τ_m` on `L_p` and the
/// target `w_m + p φ_E` of the renormalized kernels.
#[derive(Clone, Debug)]
pub struct WeightChain {
    pub m: usize,
    pub p: usize,
    pub k: f64,
    pub divisor: DivisorData,
    pub eps: f64,
    pub tau: Vec<f64>,
    pub tau_slopes: (f64, f64),
    pub target: RadialWeight,
}

/// `φ_{E,ε} = log(ε² e^{ρ_E} + e^{φ_E})` with `ρ_E = deg E · u_FS`, `φ_E = a_0 t`;
/// reduces to `a_0 t` at `ε = 0`.
pub fn divisor_weight(divisor: &DivisorData, eps: f64, t: f64) -> f64 {
    let a0 = divisor.coefficient(FixedPoint::Zero, 0.0);
    if eps == 0.0 {
        return a0 * t;
    }
    log_add_exp(2.0 * eps.ln() + divisor.degree(0.0) * softplus(t), a0 * t)
}

impl WeightChain {
    /// `τ_m = (p−1)(w_{m−1}/p + φ_{E,ε}) + u_L` and target `w_m + p a_0 t`.
    pub fn new(
        m: usize,
        p: usize,
        twist: &RadialWeight,
        divisor: &DivisorData,
        previous: &RadialWeight,
        current: &RadialWeight,
        eps: f64,
    ) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::invalid("eps", "must be finite and nonnegative"));
        }
        let grid = *twist.grid();
        if *previous.grid() != grid || *current.grid() != grid {
            return Err(Error::Mismatch("chain weights live on different grids".into()));
        }
        let pf = p as f64;
        let tau = (0..grid.len())
            .map(|i| {
                let t = grid.node(i);
                (pf - 1.0) * (previous.value(i) / pf + divisor_weight(divisor, eps, t)) + twist.value(i)
            })
            .collect();
        let a0 = divisor.coefficient(FixedPoint::Zero, 0.0);
        let (e_lo, e_hi) = if eps == 0.0 { (a0, a0) } else { (0.0, divisor.degree(0.0).max(a0)) };
        let (w_lo, w_hi) = previous.slopes();
        let (l_lo, l_hi) = twist.slopes();
        let tau_slopes = (
            (pf - 1.0) * (w_lo / pf + e_lo) + l_lo,
            (pf - 1.0) * (w_hi / pf + e_hi) + l_hi,
        );
        let target = current + &RadialWeight::linear(grid, pf * a0, 0.0);
        Ok(WeightChain {
            m,
            p,
            k: twist.degree(),
            divisor: divisor.clone(),
            eps,
            tau,
            tau_slopes,
            target,
        })
    }

    /// Chain between two consecutive Ricci states.
    pub fn from_ricci(previous: &RicciState, current: &RicciState, eps: f64) -> Result<Self> {
        if current.m != previous.m + 1 {
            return Err(Error::invalid("states", "Ricci states must be consecutive"));
        }
        let cfg = &current.config;
        Self::new(current.m, cfg.p, &cfg.twist, &cfg.divisor, &previous.weight, &current.weight, eps)
    }

    pub fn grid(&self) -> &RadialGrid {
        self.target.grid()
    }
}

/// Level `ℓ` of the recursion.
#[derive(Clone, Debug)]
pub struct BergmanLevel {
    pub basis: SectionBasis,
    /// `log G_j`, indexed from `j_min`.
    pub log_gram: Vec<f64>,
    /// `κ_ℓ` on the grid.
    pub kappa: Vec<f64>,
}

impl BergmanLevel {
    pub fn level(&self) -> usize {
        self.basis.level
    }

    /// Asymptotic slopes `(j_min, j_max)` of `κ_ℓ`.
    pub fn kappa_slopes(&self) -> (f64, f64) {
        (self.basis.j_min as f64, self.basis.j_max as f64)
    }

    /// `G_j` in linear scale; may overflow at large levels.
    pub fn gram(&self) -> Vec<f64> {
        self.log_gram.iter().map(|g| g.exp()).collect()
    }
}

/// `log G_j` for every `j` of `basis`, against `h_{ℓ−1} e^{−τ}`.
pub fn log_gram_diagonal(basis: &SectionBasis, chain: &WeightChain, prev: Option<&BergmanLevel>) -> Result<Vec<f64>> {
    let grid = *chain.grid();
    let n = grid.len();
    let (k_lo, k_hi) = prev.map_or((0.0, 0.0), BergmanLevel::kappa_slopes);
    let lo = (basis.j_min + 1) as f64 - k_lo - chain.tau_slopes.0;
    let hi = (basis.j_max + 1) as f64 - k_hi - chain.tau_slopes.1;
    if lo <= SLOPE_TOL {
        return Err(Error::Configuration(format!(
            "Gram integrand of z^{} at level {} is not integrable at t = -∞ (slope {lo})",
            basis.j_min, basis.level
        )));
    }
    if hi >= -SLOPE_TOL {
        return Err(Error::Configuration(format!(
            "Gram integrand of z^{} at level {} is not integrable at t = +∞ (slope {hi})",
            basis.j_max, basis.level
        )));
    }
    let w = grid.trapezoid_weights();
    let base: Vec<f64> = (0..n)
        .map(|i| {
            let kp = prev.map_or(0.0, |l| l.kappa[i]);
            grid.node(i) - kp - chain.tau[i]
        })
        .collect();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let guard = DECAY_GUARD.ln();
    let (t0, t1) = (grid.node(0), grid.node(n - 1));
    basis
        .exponents()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| {
            let jf = j as f64;
            let peak = (0..n).map(|i| jf * grid.node(i) + base[i]).fold(f64::NEG_INFINITY, f64::max);
            for (side, idx, t) in [("lower", 0, t0), ("upper", n - 1, t1)] {
                let ratio = jf * t + base[idx] - peak;
                if ratio > guard {
                    return Err(Error::QuadratureTruncation {
                        level: basis.level,
                        exponent: j,
                        side,
                        ratio: ratio.exp(),
                    });
                }
            }
            Ok(ln_2pi + log_sum_exp((0..n).map(|i| jf * grid.node(i) + base[i] + w[i].ln())))
        })
        .collect()
}

/// `G_j` in linear scale.
pub fn gram_diagonal(basis: &SectionBasis, chain: &WeightChain, prev: Option<&BergmanLevel>) -> Result<Vec<f64>> {
    Ok(log_gram_diagonal(basis, chain, prev)?.into_iter().map(f64::exp).collect())
}

fn kernel_profile(grid: &RadialGrid, basis: &SectionBasis, log_gram: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let t = grid.node(i);
            log_sum_exp(
                basis
                    .exponents()
                    .zip(log_gram)
                    .map(move |(j, g)| j as f64 * t - g),
            )
        })
        .collect()
}

/// Next level `h_{ℓ+1} = K_{ℓ+1}^{−1}`; `prev = None` gives `K_1` against `e^{−τ}`.
pub fn bergman_step(prev: Option<&BergmanLevel>, chain: &WeightChain) -> Result<BergmanLevel> {
    let level = prev.map_or(1, |l| l.level() + 1);
    let basis = section_range(level, chain.p, chain.k, &chain.divisor)?;
    let log_gram = log_gram_diagonal(&basis, chain, prev)?;
    let kappa = kernel_profile(chain.grid(), &basis, &log_gram);
    Ok(BergmanLevel { basis, log_gram, kappa })
}

/// Levels `1..=levels` of the recursion.
pub fn run_levels(chain: &WeightChain, levels: usize) -> Result<Vec<BergmanLevel>> {
    let mut out: Vec<BergmanLevel> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let next = bergman_step(out.last(), chain)?;
        out.push(next);
    }
    Ok(out)
}

/// `(κ_ℓ − log ℓ!) / ℓ`.
pub fn renormalized_profile(level: &BergmanLevel) -> Vec<f64> {
    let l = level.level();
    let shift = ln_factorial(l);
    level.kappa.iter().map(|k| (k - shift) / l as f64).collect()
}

/// Distances of renormalized kernels to the target on a window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub levels: Vec<usize>,
    pub distances: Vec<f64>,
    /// `min (renormalized − target)` per level.
    pub min_signed: Vec<f64>,
    /// Every distance from level 20 on is at most its predecessor.
    pub monotone_from_20: bool,
    /// `min_signed ≥ −log(ℓ+1)/ℓ` at every level.
    pub liminf_bound_holds: bool,
    /// Least-squares `C` in `distance ≈ C · log ℓ / ℓ`.
    pub rate_constant: f64,
    /// Relative RMS misfit of that fit over levels `≥ 20`.
    pub rate_misfit: f64,
}

/// Compares each level's renormalized kernel with `chain.target` on `[lo, hi]`.
pub fn convergence_check(levels: &[BergmanLevel], chain: &WeightChain, window: (f64, f64)) -> Result<ConvergenceTrace> {
    if levels.len() < 3 {
        return Err(Error::invalid("levels", "need a trace of at least three levels"));
    }
    let grid = chain.grid();
    let range = grid.window(window.0, window.1);
    let target = chain.target.values();
    let mut distances = Vec::with_capacity(levels.len());
    let mut min_signed = Vec::with_capacity(levels.len());
    for lvl in levels {
        let r = renormalized_profile(lvl);
        let (mut dmax, mut smin) = (0.0f64, f64::INFINITY);
        for i in range.clone() {
            let d = r[i] - target[i];
            dmax = dmax.max(d.abs());
            smin = smin.min(d);
        }
        distances.push(dmax);
        min_signed.push(smin);
    }
    let lv: Vec<usize> = levels.iter().map(BergmanLevel::level).collect();
    let monotone_from_20 = (1..levels.len()).all(|i| lv[i] <= 20 || distances[i] <= distances[i - 1]);
    let liminf_bound_holds = lv
        .iter()
        .zip(&min_signed)
        .all(|(&l, &s)| s >= -((l as f64 + 1.0).ln() / l as f64));
    let fit: Vec<(f64, f64)> = lv
        .iter()
        .zip(&distances)
        .filter(|(l, _)| **l >= 20)
        .map(|(&l, &d)| ((l as f64).ln() / l as f64, d))
        .collect();
    let (sxy, sxx) = fit.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x * y, b + x * x));
    let rate_constant = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let rate_misfit = if fit.is_empty() {
        f64::NAN
    } else {
        let num: f64 = fit.iter().map(|(x, y)| (y - rate_constant * x).powi(2)).sum();
        let den: f64 = fit.iter().map(|(_, y)| y * y).sum();
        (num / den).sqrt()
    };
    Ok(ConvergenceTrace {
        levels: lv,
        distances,
        min_signed,
        monotone_from_20,
        liminf_bound_holds,
        rate_constant,
        rate_misfit,
    })
}

/// One level of the finite Hölder chain `∫K_ℓ^{1/ℓ} e^{−τ} dλ ≤ (Π N_i)^{1/ℓ}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainCertificate {
    pub level: usize,
    pub dimension: usize,
    pub log_lhs: f64,
    pub log_rhs: f64,
    /// `log_rhs − log_lhs`; nonnegative when the chain holds exactly.
    pub slack: f64,
    pub holds: bool,
}

/// Chain report with the asymptotic comparison value `(pA)¹ = p · deg A`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainReport {
    pub certificates: Vec<ChainCertificate>,
    pub asymptotic_bound: f64,
}

/// Checks the chain at every level; levels must be `1, 2, …` in order.
pub fn integral_chain_check(levels: &[BergmanLevel], chain: &WeightChain) -> Result<ChainReport> {
    if levels.is_empty() {
        return Err(Error::invalid("levels", "need at least one level"));
    }
    let grid = chain.grid();
    let w = grid.trapezoid_weights();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut log_prod = 0.0;
    let mut certificates = Vec::with_capacity(levels.len());
    for (idx, lvl) in levels.iter().enumerate() {
        if lvl.level() != idx + 1 {
            return Err(Error::invalid("levels", "levels must start at 1 and be consecutive"));
        }
        let l = lvl.level() as f64;
        let log_lhs = ln_2pi
            + log_sum_exp((0..grid.len()).map(|i| lvl.kappa[i] / l - chain.tau[i] + grid.node(i) + w[i].ln()));
        log_prod += (lvl.basis.dimension() as f64).ln();
        let log_rhs = log_prod / l;
        certificates.push(ChainCertificate {
            level: lvl.level(),
            dimension: lvl.basis.dimension(),
            log_lhs,
            log_rhs,
            slack: log_rhs - log_lhs,
            holds: log_lhs <= log_rhs + CHAIN_SLACK.ln_1p(),
        });
    }
    let deg_a = chain.k - 2.0 - chain.divisor.degree(0.0);
    Ok(ChainReport {
        certificates,
        asymptotic_bound: chain.p as f64 * deg_a,
    })
}

/// `C_ℓ = inf (κ_ℓ − log|S_E|^{2{ℓp}} − ℓ · target)` in log form.
pub fn c_ell_diagnostic(level: &BergmanLevel, chain: &WeightChain) -> Result<f64> {
    if chain.eps != 0.0 {
        return Err(Error::Configuration("the C_ℓ monitor is defined for ε = 0 chains".into()));
    }
    let l = level.level() as f64;
    let (t_lo, t_hi) = chain.target.slopes();
    let f = level.basis.fractional;
    let ref_slopes = (l * t_lo + f.0, l * t_hi - f.1);
    let (k_lo, k_hi) = level.kappa_slopes();
    if (ref_slopes.0 - k_lo).abs() > SLOPE_TOL || (ref_slopes.1 - k_hi).abs() > SLOPE_TOL {
        return Err(Error::Configuration(format!(
            "reference slopes {ref_slopes:?} differ from kernel slopes {:?}; the infimum escapes to the boundary",
            (k_lo, k_hi)
        )));
    }
    let grid = chain.grid();
    Ok((0..grid.len())
        .map(|i| level.kappa[i] - level.basis.fractional_log_frame(grid.node(i)) - l * chain.target.value(i))
        .fold(f64::INFINITY, f64::min))
}

/// `(ℓ, C_ℓ, C_ℓ + log ℓ − C_{ℓ−1})` along a run.
pub fn c_ell_trace(levels: &[BergmanLevel], chain: &WeightChain) -> Result<Vec<(usize, f64, f64)>> {
    let mut out: Vec<(usize, f64, f64)> = Vec::with_capacity(levels.len());
    for lvl in levels {
        let c = c_ell_diagnostic(lvl, chain)?;
        let inc = match out.last() {
            Some(&(_, prev, _)) => c + (lvl.level() as f64).ln() - prev,
            None => f64::NAN,
        };
        out.push((lvl.level(), c, inc));
    }
    Ok(out)
}

/// Largest `|⟨z^a, z^b⟩| / √(G_a G_b)` over `pairs` random off-diagonal pairs,
/// with the angular integral done by an equispaced rule.
pub fn off_diagonal_check(level: &BergmanLevel, chain: &WeightChain, prev: Option<&BergmanLevel>, pairs: usize, seed: u64) -> f64 {
    let basis = &level.basis;
    if basis.dimension() < 2 {
        return 0.0;
    }
    let grid = chain.grid();
    let n = grid.len();
    let w = grid.trapezoid_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = (basis.j_max - basis.j_min) as usize;
    let angles = 2 * spread + 2;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = rng.random_range(basis.j_min..=basis.j_max);
        let mut b = rng.random_range(basis.j_min..=basis.j_max);
        if a == b {
            b = if b == basis.j_max { basis.j_min } else { b + 1 };
        }
        let dj = (a - b) as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for q in 0..angles {
            let theta = 2.0 * std::f64::consts::PI * q as f64 / angles as f64;
            re += (dj * theta).cos();
            im += (dj * theta).sin();
        }
        let angular = 2.0 * std::f64::consts::PI / angles as f64;
        let (re, im) = (re * angular, im * angular);
        let log_radial = log_sum_exp((0..n).map(|i| {
            let kp = prev.map_or(0.0, |l| l.kappa[i]);
            ((a + b) as f64 / 2.0 + 1.0) * grid.node(i) - kp - chain.tau[i] + w[i].ln()
        }));
        let ga = level.log_gram[(a - basis.j_min) as usize];
        let gb = level.log_gram[(b - basis.j_min) as usize];
        let rel = (re.hypot(im)).ln() + log_radial - 0.5 * (ga + gb);
        worst = worst.max(rel.exp());
    }
    worst
}

/// Which Ricci iterate the Bergman run targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RicciStage {
    /// Fixed outer index `m ≥ 1`.
    Step(usize),
    /// Iterate until the gap is below `stop_tol`.
    Converged { stop_tol: f64, m_max: usize },
}

/// Inputs of a full Bergman experiment.
#[derive(Clone, Debug)]
pub struct BergmanSetup {
    pub k: f64,
    pub divisor: DivisorData,
    pub p: usize,
    pub stage: RicciStage,
    pub levels: usize,
    pub half_width: f64,
    pub nodes: usize,
    pub eps: f64,
}

/// A completed run: the grid actually used, the chain and every level.
#[derive(Clone, Debug)]
pub struct BergmanRun {
    pub grid: RadialGrid,
    pub chain: WeightChain,
    pub levels: Vec<BergmanLevel>,
    /// `sup |w_m/p − log p − u_KE|` when the stage is converged.
    pub cross_route_distance: Option<f64>,
    pub widenings: usize,
}

fn build_chain(setup: &BergmanSetup, grid: RadialGrid) -> Result<(WeightChain, Option<f64>)> {
    let twist = RadialWeight::fubini_study(grid, setup.k);
    let cfg = RicciConfig::new(twist, setup.divisor.clone(), setup.p)?;
    match setup.stage {
        RicciStage::Step(m) => {
            if m == 0 {
                return Err(Error::invalid("m", "the outer index starts at 1"));
            }
            let mut prev = RicciState::initial(cfg);
            let mut cur = ricci_step(&prev, crate::ricci::STEP_TOL)?;
            while cur.m < m {
                prev = cur;
                cur = ricci_step(&prev, crate::ricci::STEP_TOL)?;
            }
            Ok((WeightChain::from_ricci(&prev, &cur, setup.eps)?, None))
        }
        RicciStage::Converged { stop_tol, m_max } => {
            let (state, _) = run_ricci(cfg.clone(), m_max, stop_tol)?;
            let prev = RicciState {
                config: cfg.clone(),
                m: state.m - 1,
                weight: state.previous.clone().expect("a run has at least one step"),
                previous: None,
                report: None,
            };
            let ke = crate::solver::solve_ke_ode(&cfg.ke_problem()?, crate::solver::DEFAULT_TOL, crate::solver::DEFAULT_MAX_ITER)?;
            let cross = crate::ricci::compare_to_ke(&state, &ke)?.sup_distance;
            Ok((WeightChain::from_ricci(&prev, &state, setup.eps)?, Some(cross)))
        }
    }
}

/// Runs the outer Ricci stage and `setup.levels` Bergman levels, widening the
/// grid (same spacing, `T × 1.5`) up to three times when the decay guard trips.
pub fn run_bergman(setup: &BergmanSetup) -> Result<BergmanRun> {
    if setup.levels == 0 {
        return Err(Error::invalid("levels", "need at least one level"));
    }
    let mut half_width = setup.half_width;
    let mut nodes = setup.nodes;
    let mut widenings = 0;
    loop {
        let grid = make_grid(half_width, nodes)?;
        let (chain, cross_route_distance) = build_chain(setup, grid)?;
        match run_levels(&chain, setup.levels) {
            Ok(levels) => {
                return Ok(BergmanRun {
                    grid,
                    chain,
                    levels,
                    cross_route_distance,
                    widenings,
                })
            }
            Err(Error::QuadratureTruncation { .. }) if widenings < 3 => {
                widenings += 1;
                half_width *= 1.5;
                nodes = ((nodes - 1) as f64 * 1.5).round() as usize + 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Per-level CSV: `level, dimension, min_log_gram, max_log_gram, distance, chain_slack, c_ell`.
pub fn write_level_trace<W: Write>(
    out: W,
    levels: &[BergmanLevel],
    convergence: &ConvergenceTrace,
    chain: &ChainReport,
    c_ell: &[(usize, f64, f64)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "dimension", "min_log_gram", "max_log_gram", "distance", "chain_slack", "c_ell"])?;
    for (i, lvl) in levels.iter().enumerate() {
        let (lo, hi) = lvl
            .log_gram
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(*g), b.max(*g)));
        w.write_record([
            lvl.level().to_string(),
            lvl.basis.dimension().to_string(),
            fmt_num(lo),
            fmt_num(hi),
            fmt_num(convergence.distances[i]),
            fmt_num(chain.certificates[i].slack),
            c_ell.get(i).map_or(String::new(), |c| fmt_num(c.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn big_grid() -> RadialGrid {
        make_grid(DEFAULT_HALF_WIDTH, DEFAULT_NODES).unwrap()
    }

    fn fs_chain(grid: RadialGrid, p: usize, k: f64) -> WeightChain {
        let twist = RadialWeight::fubini_study(grid, k);
        let cfg = RicciConfig::new(twist, DivisorData::empty(), p).unwrap();
        let s0 = RicciState::initial(cfg);
        let s1 = ricci_step(&s0, 1e-11).unwrap();
        WeightChain::from_ricci(&s0, &s1, 0.0).unwrap()
    }

    #[test]
    fn section_range_examples() {
        let e = DivisorData::empty();
        let b = section_range(1, 1, 4.0, &e).unwrap();
        assert_eq!((b.j_min, b.j_max, b.dimension()), (0, 2, 3));
        assert_eq!(section_range(10, 2, 4.0, &e).unwrap().dimension(), 41);
        let conic = DivisorData::point(FixedPoint::Zero, 0.5).unwrap();
        assert_eq!(section_range(4, 2, 4.0, &conic).unwrap().j_min, 4);
        let b = section_range(3, 1, 4.0, &conic).unwrap();
        assert_eq!(b.j_min, 2);
        assert_relative_eq!(b.fractional.0, 0.5);
        assert!(section_range(0, 1, 4.0, &e).is_err());
        assert!(section_range(1, 1, 3.5, &e).is_err());
    }

    #[test]
    fn level_one_gram_is_beta_function() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let basis = section_range(1, 1, 4.0, &DivisorData::empty()).unwrap();
        let g = gram_diagonal(&basis, &chain, None).unwrap();
        let pi = std::f64::consts::PI;
        for (got, want) in g.iter().zip([2.0 * pi / 3.0, pi / 3.0, 2.0 * pi / 3.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-8);
        }
    }

    #[test]
    fn symmetric_configuration_has_symmetric_gram() {
        let chain = fs_chain(big_grid(), 2, 5.0);
        let l1 = bergman_step(None, &chain).unwrap();
        let g = &l1.log_gram;
        for j in 0..g.len() {
            assert_relative_eq!(g[j], g[g.len() - 1 - j], max_relative = 1e-10);
        }
    }

    #[test]
    fn decay_guard_trips_on_short_grid() {
        let chain = fs_chain(make_grid(20.0, 2049).unwrap(), 1, 4.0);
        assert!(matches!(bergman_step(None, &chain), Err(Error::QuadratureTruncation { .. })));
    }

    #[test]
    fn kernels_are_convex_and_have_level_slopes() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let levels = run_levels(&chain, 5).unwrap();
        let h = chain.grid().spacing();
        for lvl in &levels {
            let k = &lvl.kappa;
            assert!((1..k.len() - 1).all(|i| k[i + 1] - 2.0 * k[i] + k[i - 1] >= -1e-9 * h * h));
            let n = k.len();
            let slope = (k[n - 1] - k[n - 2]) / h / lvl.level() as f64;
            assert_relative_eq!(slope, 2.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn renormalized_level_one_is_kappa() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let l1 = bergman_step(None, &chain).unwrap();
        assert_eq!(renormalized_profile(&l1), l1.kappa);
    }

    #[test]
    fn chain_is_tight_for_fubini_study() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let levels = run_levels(&chain, 8).unwrap();
        let report = integral_chain_check(&levels, &chain).unwrap();
        assert_eq!(report.asymptotic_bound, 2.0);
        for c in &report.certificates {
            assert!(c.holds);
            assert_eq!(c.dimension, 2 * c.level + 1);
            assert!(c.slack.abs() < 1e-9, "{c:?}");
        }
    }

    #[test]
    fn convergence_check_needs_a_trace() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let levels = run_levels(&chain, 2).unwrap();
        assert!(convergence_check(&levels, &chain, (-10.0, 10.0)).is_err());
    }

    #[test]
    fn gram_grows_as_eps_decreases() {
        let grid = big_grid();
        let twist = RadialWeight::fubini_study(grid, 4.0);
        let d = DivisorData::point(FixedPoint::Zero, 0.5).unwrap();
        let cfg = RicciConfig::new(twist.clone(), d.clone(), 2).unwrap();
        let s0 = RicciState::initial(cfg);
        let s1 = ricci_step(&s0, 1e-11).unwrap();
        let mut last: Option<Vec<f64>> = None;
        for eps in [0.5, 0.2, 0.1, 0.05] {
            let chain = WeightChain::from_ricci(&s0, &s1, eps).unwrap();
            let l1 = bergman_step(None, &chain).unwrap();
            if let Some(prev) = &last {
                assert!(l1.log_gram.iter().zip(prev).all(|(a, b)| a > b));
            }
            last = Some(l1.log_gram);
        }
    }

    #[test]
    fn c_ell_examples() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let levels = run_levels(&chain, 4).unwrap();
        for lvl in &levels {
            assert!(c_ell_diagnostic(lvl, &chain).unwrap().is_finite());
        }
        let mut wrong = chain.clone();
        wrong.target = wrong.target.scaled(1.5);
        assert!(matches!(c_ell_diagnostic(&levels[0], &wrong), Err(Error::Configuration(_))));
    }

    #[test]
    fn off_diagonal_entries_vanish() {
        let chain = fs_chain(big_grid(), 1, 4.0);
        let l1 = bergman_step(None, &chain).unwrap();
        let l2 = bergman_step(Some(&l1), &chain).unwrap();
        assert!(off_diagonal_check(&l2, &chain, Some(&l1), 10, 7) <= 1e-12);
    }
}
