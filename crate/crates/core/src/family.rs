//! One-parameter families over a rotation-invariant base.
//!
//! The base coordinate is `s = log|y|²`. A family twist `u_L(t, s)` is jointly
//! positively curved iff its Hessian in `(t, s)` is positive semidefinite, and
//! the same test applied to the fiberwise Kähler-Einstein weights certifies
//! relative semipositivity at model scale.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::numeric::{log_sum_exp, logistic, softplus};
use crate::radial::{DivisorData, FixedPoint, RadialGrid, RadialWeight};
use crate::solver::{solve_ke_ode, MAProblem, SolveReport, DEFAULT_MAX_ITER};

/// Default positivity tolerance (scaled by the local Hessian size).
pub const POSITIVITY_TOL: f64 = 1e-6;
/// Tolerance of the twist precheck.
pub const PRECHECK_TOL: f64 = 1e-8;
/// Tolerance on second differences of `−log‖s‖²`.
pub const NS_CONVEXITY_TOL: f64 = 1e-8;

/// Fiber profile `v(t)` of a perturbation `λ e^s v(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `σ(1 − σ)` with `σ = e^t / (1 + e^t)`, i.e. `u_FS''`.
    Bump,
    /// `1 / (1 + t²)`.
    Lorentzian,
    /// `log(1 + e^t) · log(1 + e^{−t})`.
    SoftplusProduct,
}

impl Profile {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Profile::Bump => {
                let s = logistic(t);
                s * (1.0 - s)
            }
            Profile::Lorentzian => 1.0 / (1.0 + t * t),
            Profile::SoftplusProduct => softplus(t) * softplus(-t),
        }
    }
}

/// Built-in family recipes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyRecipe {
    /// `u_L = k u_FS` on every fiber.
    Product { k: f64 },
    /// `u_L = k u_FS + λ e^s v(t)`.
    Perturbed { k: f64, lambda: f64, profile: Profile },
    /// As `Perturbed`, with fixed fiber divisor `a_0 [0]`.
    Conic { k: f64, a0: f64, lambda: f64, profile: Profile },
}

impl FamilyRecipe {
    pub fn k(&self) -> f64 {
        match *self {
            FamilyRecipe::Product { k } | FamilyRecipe::Perturbed { k, .. } | FamilyRecipe::Conic { k, .. } => k,
        }
    }

    pub fn divisor(&self) -> Result<DivisorData> {
        match *self {
            FamilyRecipe::Conic { a0, .. } => DivisorData::point(FixedPoint::Zero, a0),
            _ => Ok(DivisorData::empty()),
        }
    }

    fn perturbation(&self) -> Option<(f64, Profile)> {
        match *self {
            FamilyRecipe::Product { .. } => None,
            FamilyRecipe::Perturbed { lambda, profile, .. } | FamilyRecipe::Conic { lambda, profile, .. } => {
                Some((lambda, profile))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match *self {
            FamilyRecipe::Product { k } => k.is_finite(),
            FamilyRecipe::Perturbed { k, lambda, .. } => k.is_finite() && lambda.is_finite(),
            FamilyRecipe::Conic { k, a0, lambda, .. } => k.is_finite() && a0.is_finite() && lambda.is_finite(),
        };
        if !finite {
            return Err(Error::invalid("recipe", "parameters must be finite"));
        }
        Ok(())
    }

    /// Twist of the fiber over `s`.
    pub fn twist(&self, grid: RadialGrid, s: f64) -> Result<RadialWeight> {
        let fs = RadialWeight::fubini_study(grid, self.k());
        match self.perturbation() {
            None => Ok(fs),
            Some((lambda, profile)) => {
                let scale = lambda * s.exp();
                let v = (0..grid.len()).map(|i| scale * profile.eval(grid.node(i))).collect();
                Ok(&fs + &RadialWeight::from_values(grid, v, (0.0, 0.0))?)
            }
        }
    }
}

/// Uniform base grid `s_0 < … < s_{B−1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseGrid {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl BaseGrid {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || hi < lo || (nodes > 1 && hi == lo) {
            return Err(Error::invalid("base", format!("invalid base interval [{lo}, {hi}]")));
        }
        if nodes == 0 {
            return Err(Error::invalid("base", "need at least one base node"));
        }
        Ok(BaseGrid { lo, hi, nodes })
    }

    pub fn spacing(&self) -> f64 {
        if self.nodes < 2 {
            0.0
        } else {
            (self.hi - self.lo) / (self.nodes - 1) as f64
        }
    }

    pub fn node(&self, j: usize) -> f64 {
        if self.nodes < 2 {
            return self.lo;
        }
        let f = j as f64 / (self.nodes - 1) as f64;
        self.lo + f * (self.hi - self.lo)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|j| self.node(j)).collect()
    }
}

/// Minima of the `(t, s)` Hessian over interior nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub min_tt: f64,
    pub min_tt_at: (f64, f64),
    pub min_det: f64,
    pub min_det_at: (f64, f64),
    pub max_abs_mixed: f64,
    pub max_abs_ss: f64,
    pub tol: f64,
    /// Worst `det / max(1, |H|²)` and `H_tt / max(1, |H|)`.
    pub worst_scaled_det: f64,
    pub worst_scaled_tt: f64,
    pub passed: bool,
    pub scope: String,
}

/// Joint positivity of a nodal field `u[j][i] = u(t_i, s_j)`.
pub fn hessian_certificate(u: &[Vec<f64>], fiber: &RadialGrid, base: &BaseGrid, tol: f64) -> Result<PositivityCertificate> {
    if base.nodes < 3 {
        return Err(Error::invalid("base", "need at least 3 base nodes"));
    }
    let (ht, hs) = (fiber.spacing(), base.spacing());
    let n = fiber.len();
    let mut cert = PositivityCertificate {
        min_tt: f64::INFINITY,
        min_tt_at: (0.0, 0.0),
        min_det: f64::INFINITY,
        min_det_at: (0.0, 0.0),
        max_abs_mixed: 0.0,
        max_abs_ss: 0.0,
        tol,
        worst_scaled_det: f64::INFINITY,
        worst_scaled_tt: f64::INFINITY,
        passed: true,
        scope: "relative semipositivity on the smooth locus; no extension across singular fibers".into(),
    };
    for j in 1..base.nodes - 1 {
        for i in 1..n - 1 {
            let tt = (u[j][i + 1] - 2.0 * u[j][i] + u[j][i - 1]) / (ht * ht);
            let ss = (u[j + 1][i] - 2.0 * u[j][i] + u[j - 1][i]) / (hs * hs);
            let ts = (u[j + 1][i + 1] - u[j + 1][i - 1] - u[j - 1][i + 1] + u[j - 1][i - 1]) / (4.0 * ht * hs);
            let det = tt * ss - ts * ts;
            let norm = tt.abs().max(ss.abs()).max(ts.abs());
            let at = (fiber.node(i), base.node(j));
            if tt < cert.min_tt {
                cert.min_tt = tt;
                cert.min_tt_at = at;
            }
            if det < cert.min_det {
                cert.min_det = det;
                cert.min_det_at = at;
            }
            cert.max_abs_mixed = cert.max_abs_mixed.max(ts.abs());
            cert.max_abs_ss = cert.max_abs_ss.max(ss.abs());
            cert.worst_scaled_det = cert.worst_scaled_det.min(det / norm.powi(2).max(1.0));
            cert.worst_scaled_tt = cert.worst_scaled_tt.min(tt / norm.max(1.0));
        }
    }
    cert.passed = cert.worst_scaled_det >= -tol && cert.worst_scaled_tt >= -tol;
    Ok(cert)
}

/// Family of fiber twists with its precheck record.
#[derive(Clone, Debug)]
pub struct FiberFamily {
    pub recipe: FamilyRecipe,
    pub base: BaseGrid,
    pub fiber: RadialGrid,
    pub divisor: DivisorData,
    pub twists: Vec<RadialWeight>,
    pub precheck: Option<PositivityCertificate>,
    pub joint_positive: bool,
}

/// Builds a family and runs the joint-positivity precheck on the twist.
pub fn build_family(recipe: FamilyRecipe, base: BaseGrid, fiber: RadialGrid) -> Result<FiberFamily> {
    build_family_with(recipe, base, fiber, false)
}

/// As [`build_family`]; with `bypass_precheck` a failing precheck is recorded
/// instead of rejected (used for control experiments).
pub fn build_family_with(recipe: FamilyRecipe, base: BaseGrid, fiber: RadialGrid, bypass_precheck: bool) -> Result<FiberFamily> {
    recipe.validate()?;
    let divisor = recipe.divisor()?;
    let twists = base
        .nodes()
        .into_iter()
        .map(|s| recipe.twist(fiber, s))
        .collect::<Result<Vec<_>>>()?;
    let (precheck, joint_positive) = if base.nodes >= 3 {
        let field: Vec<Vec<f64>> = twists.iter().map(|w| w.values().to_vec()).collect();
        let cert = hessian_certificate(&field, &fiber, &base, PRECHECK_TOL)?;
        if !cert.passed && !bypass_precheck {
            let (quantity, value, at) = if cert.worst_scaled_tt < -PRECHECK_TOL {
                ("d²u/dt²", cert.min_tt, cert.min_tt_at)
            } else {
                ("Hessian determinant", cert.min_det, cert.min_det_at)
            };
            return Err(Error::JointPositivity {
                t: at.0,
                s: at.1,
                quantity,
                value,
            });
        }
        let ok = cert.passed;
        (Some(cert), ok)
    } else {
        let ok = twists.iter().all(|w| w.is_positively_curved(PRECHECK_TOL));
        if !ok && !bypass_precheck {
            return Err(Error::JointPositivity {
                t: f64::NAN,
                s: base.lo,
                quantity: "d²u/dt²",
                value: twists[0].min_curvature(),
            });
        }
        (None, ok)
    };
    Ok(FiberFamily {
        recipe,
        base,
        fiber,
        divisor,
        twists,
        precheck,
        joint_positive,
    })
}

/// Fiberwise Kähler-Einstein weights `u(t_i, s_j)` and their reports.
#[derive(Clone, Debug)]
pub struct RelativePotential {
    pub base: BaseGrid,
    pub fiber: RadialGrid,
    pub reports: Vec<SolveReport>,
}

impl RelativePotential {
    /// Column `j`: the Kähler-Einstein weight of fiber `s_j`.
    pub fn column(&self, j: usize) -> &[f64] {
        self.reports[j].ke_weight.values()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.reports.len()).map(|j| self.column(j).to_vec()).collect()
    }

    /// Matrix CSV: one row per `t`, one column per `s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.base.nodes().iter().map(|s| format!("s={}", fmt_num(*s))));
        w.write_record(&header)?;
        for i in 0..self.fiber.len() {
            let mut row = vec![fmt_num(self.fiber.node(i))];
            row.extend(self.reports.iter().map(|r| fmt_num(r.ke_weight.value(i))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves every fiber concurrently.
pub fn solve_fiberwise(family: &FiberFamily, tol: f64) -> Result<RelativePotential> {
    let reports = family
        .twists
        .par_iter()
        .enumerate()
        .map(|(index, twist)| {
            MAProblem::kahler_einstein(twist.clone(), family.divisor.clone())
                .and_then(|p| solve_ke_ode(&p, tol, DEFAULT_MAX_ITER))
                .map_err(|e| Error::Fiber {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelativePotential {
        base: family.base,
        fiber: family.fiber,
        reports,
    })
}

/// Joint positivity of the fiberwise Kähler-Einstein weights.
pub fn base_positivity_check(rel: &RelativePotential, tol: f64) -> Result<PositivityCertificate> {
    hessian_certificate(&rel.matrix(), &rel.fiber, &rel.base, tol)
}

/// Uniform upper bound over a base subrange.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniformSup {
    pub bound: f64,
    pub per_fiber: Vec<(f64, f64)>,
}

/// `sup_{s ∈ [lo, hi]} sup_t (u − deg A · u_FS)`.
pub fn uniform_sup_check(rel: &RelativePotential, subrange: (f64, f64)) -> Result<UniformSup> {
    let per_fiber: Vec<(f64, f64)> = rel
        .base
        .nodes()
        .into_iter()
        .zip(&rel.reports)
        .filter(|(s, _)| *s >= subrange.0 - 1e-12 && *s <= subrange.1 + 1e-12)
        .map(|(s, r)| (s, r.correction.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    if per_fiber.is_empty() {
        return Err(Error::invalid("subrange", "no base nodes in the requested subrange"));
    }
    let bound = per_fiber.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !bound.is_finite() {
        return Err(Error::Configuration("fiberwise sup is not finite".into()));
    }
    Ok(UniformSup { bound, per_fiber })
}

/// `‖z^j‖² = (2π ∫ e^{jt/m − ψ + t} dt)^m` on fiber `index`, `ψ = u_L + a_0 t`.
pub fn ns_norm(j: i64, m: usize, index: usize, family: &FiberFamily) -> Result<f64> {
    Ok(log_ns_norm(j, m, index, family)?.exp())
}

/// Logarithm of [`ns_norm`].
pub fn log_ns_norm(j: i64, m: usize, index: usize, family: &FiberFamily) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    let twist = family
        .twists
        .get(index)
        .ok_or_else(|| Error::invalid("index", format!("fiber {index} out of range")))?;
    let a0 = family.divisor.coefficient(FixedPoint::Zero, 0.0);
    let mf = m as f64;
    let jf = j as f64;
    let (l_lo, l_hi) = twist.slopes();
    let lo = jf / mf - l_lo - a0 + 1.0;
    let hi = jf / mf - l_hi - a0 + 1.0;
    if lo <= 0.0 || hi >= 0.0 {
        return Err(Error::Configuration(format!(
            "section z^{j} of {m}(K + L) is not integrable (slopes {lo}, {hi})"
        )));
    }
    let grid = &family.fiber;
    let w = grid.trapezoid_weights();
    let log_int = log_sum_exp((0..grid.len()).map(|i| {
        let t = grid.node(i);
        jf * t / mf - twist.value(i) - a0 * t + t + w[i].ln()
    }));
    Ok(mf * ((2.0 * std::f64::consts::PI).ln() + log_int))
}

/// Convexity of `s ↦ −log‖z^j‖²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NsCertificate {
    pub j: i64,
    pub m: usize,
    pub values: Vec<f64>,
    /// Smallest divided second difference in `s`.
    pub min_second_difference: f64,
    pub passed: bool,
}

pub fn ns_convexity_check(j: i64, m: usize, family: &FiberFamily) -> Result<NsCertificate> {
    if family.base.nodes < 3 {
        return Err(Error::invalid("base", "need at least 3 base nodes"));
    }
    let values = (0..family.base.nodes)
        .map(|idx| log_ns_norm(j, m, idx, family).map(|v| -v))
        .collect::<Result<Vec<_>>>()?;
    let hs = family.base.spacing();
    let min_second_difference = values
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]) / (hs * hs))
        .fold(f64::INFINITY, f64::min);
    Ok(NsCertificate {
        j,
        m,
        passed: min_second_difference >= -NS_CONVEXITY_TOL,
        values,
        min_second_difference,
    })
}

/// Exponents `j` with `z^j` integrable in `m(K + L)` on every fiber.
pub fn admissible_exponents(m: usize, family: &FiberFamily) -> Vec<i64> {
    let top = (m as f64 * (family.recipe.k() - 2.0)).floor() as i64;
    (0..=top.max(0))
        .filter(|&j| (0..family.twists.len()).all(|idx| log_ns_norm(j, m, idx, family).is_ok()))
        .collect()
}

/// Joint positivity of the Bergman kernels `κ_ℓ(t, s)` for `p = 1`, where
/// `τ = u_L(·, s)` on each fiber. Returns one certificate per level.
pub fn bergman_joint_convexity(family: &FiberFamily, levels: usize, tol: f64) -> Result<Vec<PositivityCertificate>> {
    use crate::bergman::{bergman_step, WeightChain};
    let per_fiber = family
        .twists
        .par_iter()
        .map(|twist| {
            let chain = WeightChain::new(1, 1, twist, &family.divisor, twist, twist, 0.0)?;
            let mut out: Vec<crate::bergman::BergmanLevel> = Vec::with_capacity(levels);
            for _ in 0..levels {
                let next = bergman_step(out.last(), &chain)?;
                out.push(next);
            }
            Ok(out.into_iter().map(|l| l.kappa).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    (0..levels)
        .map(|l| {
            let field: Vec<Vec<f64>> = per_fiber.iter().map(|f| f[l].clone()).collect();
            hessian_certificate(&field, &family.fiber, &family.base, tol)
        })
        .collect()
}

/// `s, −log‖z^j‖²` as CSV.
pub fn write_ns_trace<W: Write>(out: W, family: &FiberFamily, cert: &NsCertificate) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "neg_log_norm"])?;
    for (s, v) in family.base.nodes().iter().zip(&cert.values) {
        w.write_record([fmt_num(*s), fmt_num(*v)])?;
    }
    w.flush()?;
    Ok(())
}
