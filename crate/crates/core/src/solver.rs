//! Radial twisted Kähler-Einstein equation.
//!
//! The solved weight `u = χ + v` (background `χ`, bounded correction `v`) satisfies
//!
//! ```text
//! u'' = 2π · Π_i (|s_i|² + ε²)^{a_i^δ} · exp(u − c·u_prev − u_L + σ·u_FS + t)
//! ```
//!
//! with `σ = deg u_L − 2 − deg χ + c·deg u_prev` equal to `deg E_δ`. The
//! discretization is a fourth-order compact (Numerov) scheme with Neumann
//! ghost reflection at `±T`, solved by damped Newton on a tridiagonal system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softplus, solve_tridiagonal};
use crate::radial::{neumann_second_difference, DivisorData, FixedPoint, RadialGrid, RadialWeight};

/// Default Newton residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default Newton iteration cap.
pub const DEFAULT_MAX_ITER: usize = 200;

const BALANCE_TOL: f64 = 1e-9;
const POLISH_STEPS: usize = 3;

/// Previous-iterate coupling `c · u_prev` on the right-hand side.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub coefficient: f64,
    pub previous: RadialWeight,
}

/// One assembled Monge-Ampère instance.
#[derive(Clone, Debug)]
pub struct MAProblem {
    pub background: RadialWeight,
    pub twist: RadialWeight,
    pub coupling: Option<Coupling>,
    pub divisor: DivisorData,
    pub eps: f64,
    pub delta: f64,
    /// Expected total curvature mass; equals `deg χ`.
    pub mass_target: f64,
}

impl MAProblem {
    pub fn new(background: RadialWeight, twist: RadialWeight) -> Self {
        let mass_target = background.degree();
        MAProblem {
            background,
            twist,
            coupling: None,
            divisor: DivisorData::empty(),
            eps: 0.0,
            delta: 0.0,
            mass_target,
        }
    }

    /// Kähler-Einstein problem of `(twist, E)`: background `deg A · u_FS` with
    /// `deg A = deg u_L − 2 − deg E`.
    pub fn kahler_einstein(twist: RadialWeight, divisor: DivisorData) -> Result<Self> {
        let deg_a = twist.degree() - 2.0 - divisor.degree(0.0);
        if deg_a <= 0.0 {
            return Err(Error::Configuration(format!(
                "K + L - E has degree {deg_a}; the twist must have degree above 2 + deg E"
            )));
        }
        let background = RadialWeight::fubini_study(*twist.grid(), deg_a);
        Ok(MAProblem::new(background, twist).with_divisor(divisor))
    }

    pub fn with_divisor(mut self, divisor: DivisorData) -> Self {
        self.divisor = divisor;
        self
    }

    pub fn with_coupling(mut self, coefficient: f64, previous: RadialWeight) -> Self {
        self.coupling = Some(Coupling { coefficient, previous });
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn grid(&self) -> &RadialGrid {
        self.background.grid()
    }

    /// `E_δ`.
    pub fn effective_divisor(&self) -> DivisorData {
        self.divisor.perturbed(self.delta)
    }

    fn coupling_parts(&self) -> (f64, (f64, f64), f64) {
        match &self.coupling {
            Some(c) => (c.coefficient, c.previous.slopes(), c.previous.degree()),
            None => (0.0, (0.0, 0.0), 0.0),
        }
    }

    /// The Fubini-Study balance `σ`.
    pub fn sigma(&self) -> f64 {
        let (c, _, prev_deg) = self.coupling_parts();
        self.twist.degree() - 2.0 - self.background.degree() + c * prev_deg
    }

    /// Checks inputs, degree balance and integrability of the right-hand side.
    pub fn validate(&self) -> Result<()> {
        let grid = *self.grid();
        if *self.twist.grid() != grid {
            return Err(Error::Mismatch("twist and background live on different grids".into()));
        }
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::invalid("eps", format!("must be finite and nonnegative, got {}", self.eps)));
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::invalid("delta", format!("must be finite and nonnegative, got {}", self.delta)));
        }
        if let Some(c) = &self.coupling {
            if !(0.0..1.0).contains(&c.coefficient) {
                return Err(Error::invalid(
                    "coupling",
                    format!("coefficient must lie in [0, 1), got {}", c.coefficient),
                ));
            }
            if *c.previous.grid() != grid {
                return Err(Error::Mismatch("previous iterate lives on a different grid".into()));
            }
        }
        if (self.mass_target - self.background.degree()).abs() > BALANCE_TOL {
            return Err(Error::Configuration(format!(
                "mass target {} differs from the background degree {}",
                self.mass_target,
                self.background.degree()
            )));
        }
        if self.mass_target <= 0.0 {
            return Err(Error::Configuration(format!(
                "background class must have positive degree, got {}",
                self.mass_target
            )));
        }
        let divisor = self.effective_divisor();
        let sigma = self.sigma();
        if (sigma - divisor.degree(0.0)).abs() > BALANCE_TOL {
            return Err(Error::Configuration(format!(
                "degree balance fails: deg L - 2 - deg χ + c deg u_prev = {sigma}, divisor degree {}",
                divisor.degree(0.0)
            )));
        }
        let (lo, hi) = self.exponent_slopes();
        if lo <= 0.0 {
            return Err(Error::Configuration(format!(
                "right-hand side is not integrable at t = -∞: exponent slope {lo} must be positive"
            )));
        }
        if hi >= 0.0 {
            return Err(Error::Configuration(format!(
                "right-hand side is not integrable at t = +∞: exponent slope {hi} must be negative"
            )));
        }
        Ok(())
    }

    /// Asymptotic slopes of the log of the right-hand side evaluated at `u = χ`.
    pub fn exponent_slopes(&self) -> (f64, f64) {
        let (c, prev, _) = self.coupling_parts();
        let (f_lo, f_hi) = self.effective_divisor().log_frame_slopes(self.eps);
        let (b_lo, b_hi) = self.background.slopes();
        let (l_lo, l_hi) = self.twist.slopes();
        let sigma = self.sigma();
        (
            f_lo + b_lo - c * prev.0 - l_lo + 1.0,
            f_hi + b_hi - c * prev.1 - l_hi + sigma + 1.0,
        )
    }

    /// `log` of the reference density: the right-hand side equals
    /// `exp(log_density_i + v_i)` with `v = u − χ`.
    pub fn log_density(&self) -> Vec<f64> {
        let grid = *self.grid();
        let divisor = self.effective_divisor();
        let sigma = self.sigma();
        let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
        (0..grid.len())
            .map(|i| {
                let t = grid.node(i);
                let prev = self
                    .coupling
                    .as_ref()
                    .map_or(0.0, |c| c.coefficient * c.previous.value(i));
                two_pi_ln + divisor.log_frame_at(t, self.eps) + self.background.value(i) - prev - self.twist.value(i)
                    + sigma * softplus(t)
                    + t
            })
            .collect()
    }

    /// Nodal residual `u'' − A(rhs)` of an arbitrary weight, where `A` is the
    /// compact averaging `(f_{i-1} + 10 f_i + f_{i+1}) / 12`.
    pub fn residual_of(&self, weight: &RadialWeight) -> Result<Vec<f64>> {
        if weight.grid() != self.grid() {
            return Err(Error::Mismatch("weight and problem live on different grids".into()));
        }
        let g = self.log_density();
        let f: Vec<f64> = (0..g.len())
            .map(|i| (g[i] + weight.value(i) - self.background.value(i)).exp())
            .collect();
        Ok((0..g.len())
            .map(|i| weight.curvature()[i] - compact_average(&f, i))
            .collect())
    }
}

#[inline]
fn compact_average(f: &[f64], i: usize) -> f64 {
    let n = f.len();
    let left = if i == 0 { f[1] } else { f[i - 1] };
    let right = if i == n - 1 { f[n - 2] } else { f[i + 1] };
    (left + 10.0 * f[i] + right) / 12.0
}

/// Outcome of a successful solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Weight in the background class, `u = χ + v`.
    pub solution: RadialWeight,
    /// `u + a_0^δ · t`: the Kähler-Einstein weight including the divisor part.
    pub ke_weight: RadialWeight,
    /// Bounded correction `v = u − χ`, the relative potential.
    pub correction: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub mass_defect: f64,
    pub mass_target: f64,
    pub divisor: DivisorData,
    pub eps: f64,
    pub delta: f64,
}

impl SolveReport {
    pub fn grid(&self) -> &RadialGrid {
        self.solution.grid()
    }

    /// Sup-norm of the relative potential.
    pub fn relative_sup(&self) -> f64 {
        self.correction.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lelong numbers `(ν_0, ν_∞)` of the Kähler-Einstein weight.
    pub fn lelong_numbers(&self) -> (f64, f64) {
        crate::radial::lelong_numbers(&self.ke_weight, self.mass_target + self.divisor.degree(0.0))
    }

    pub fn to_record(&self) -> SolveRecord {
        SolveRecord {
            convention_hash: crate::convention_hash(),
            iterations: self.iterations,
            residual: self.residual,
            mass_defect: self.mass_defect,
            mass_target: self.mass_target,
            eps: self.eps,
            delta: self.delta,
            divisor: self.divisor.clone(),
            lelong_numbers: self.lelong_numbers(),
            solution: self.solution.to_record(),
        }
    }
}

/// JSON form of a [`SolveReport`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveRecord {
    pub convention_hash: String,
    pub iterations: usize,
    pub residual: f64,
    pub mass_defect: f64,
    pub mass_target: f64,
    pub eps: f64,
    pub delta: f64,
    pub divisor: DivisorData,
    pub lelong_numbers: (f64, f64),
    pub solution: crate::radial::WeightRecord,
}

/// Solves `prob` by damped Newton from the mass-matched constant start.
pub fn solve_ke_ode(prob: &MAProblem, tol: f64, max_iter: usize) -> Result<SolveReport> {
    solve_ke_ode_from(prob, tol, max_iter, None)
}

/// As [`solve_ke_ode`], optionally warm-started from a correction `v`.
pub fn solve_ke_ode_from(
    prob: &MAProblem,
    tol: f64,
    max_iter: usize,
    initial: Option<&[f64]>,
) -> Result<SolveReport> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be at least 1"));
    }
    prob.validate()?;
    let grid = *prob.grid();
    let n = grid.len();
    let h = grid.spacing();
    let g = prob.log_density();
    let bg_curv = prob.background.curvature();
    let weights = grid.trapezoid_weights();

    let mut v = match initial {
        Some(v0) if v0.len() == n => v0.to_vec(),
        Some(v0) => {
            return Err(Error::invalid(
                "initial",
                format!("warm start has {} nodes, grid has {n}", v0.len()),
            ))
        }
        None => {
            let log_mass = log_sum_exp((0..n).map(|i| g[i] + weights[i].ln()));
            vec![prob.mass_target.ln() - log_mass; n]
        }
    };

    let eval = |v: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
        let f: Vec<f64> = (0..n).map(|i| (g[i] + v[i]).exp()).collect();
        let r: Vec<f64> = (0..n)
            .map(|i| bg_curv[i] + neumann_second_difference(v, i, h) - compact_average(&f, i))
            .collect();
        let norm = r.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) });
        (f, r, norm)
    };

    let (mut f, mut r, mut norm) = eval(&v);
    let mut iterations = 0;
    let mut polish = 0;
    let inv_h2 = 1.0 / (h * h);
    loop {
        if norm <= tol {
            if polish >= POLISH_STEPS {
                break;
            }
            polish += 1;
        } else if iterations >= max_iter {
            return Err(Error::Convergence { iterations, residual: norm });
        }
        let mut lower = vec![0.0; n - 1];
        let mut upper = vec![0.0; n - 1];
        let diag: Vec<f64> = (0..n).map(|i| -2.0 * inv_h2 - 10.0 * f[i] / 12.0).collect();
        for i in 0..n - 1 {
            upper[i] = inv_h2 - f[i + 1] / 12.0;
            lower[i] = inv_h2 - f[i] / 12.0;
        }
        upper[0] *= 2.0;
        lower[n - 2] *= 2.0;
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = solve_tridiagonal(&lower, &diag, &upper, &rhs).ok_or(Error::Convergence {
            iterations,
            residual: norm,
        })?;
        iterations += 1;

        let mut lambda = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a + lambda * b).collect();
            let (tf, tr, tn) = eval(&trial);
            if tn < norm {
                break Some((trial, tf, tr, tn));
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((nv, nf, nr, nn)) => {
                v = nv;
                f = nf;
                r = nr;
                norm = nn;
            }
            None if norm <= tol => break,
            None => return Err(Error::Convergence { iterations, residual: norm }),
        }
    }

    let density_mass: f64 = (0..n).map(|i| weights[i] * f[i]).sum();
    let mass_defect = (density_mass - prob.mass_target).abs();
    let solution = prob.background.with_correction(&v);
    let divisor = prob.effective_divisor();
    let a0 = divisor.coefficient(FixedPoint::Zero, 0.0);
    let ke_weight = &solution + &RadialWeight::linear(grid, a0, 0.0);
    Ok(SolveReport {
        solution,
        ke_weight,
        correction: v,
        iterations,
        residual: norm,
        mass_defect,
        mass_target: prob.mass_target,
        divisor,
        eps: prob.eps,
        delta: prob.delta,
    })
}

/// Closed-form solution `(k − 2) log(1 + e^t) + log((k − 2) / 2π)` for the
/// Fubini-Study twist of degree `k > 2` without divisor.
pub fn fubini_study_solution(grid: RadialGrid, k: f64) -> RadialWeight {
    RadialWeight::fubini_study(grid, k - 2.0).shifted(((k - 2.0) / (2.0 * std::f64::consts::PI)).ln())
}

/// How a regularized problem is built from the base problem at `(δ, ε)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationScheme {
    /// Kinks of the twist softened at scale `ε`; twist and background both
    /// gain `δ · u_FS`; divisor factors get the `ε²` floor.
    TwistSmoothing,
    /// Background moved to `χ − δ Σc_i · u_FS` and divisor to `E_δ`, divisor
    /// factors with the `ε²` floor; kinks of the twist softened at scale `ε`.
    Zariski,
}

/// One point `(δ_ε, ε)` of the diagonal.
#[derive(Clone, Debug)]
pub struct DiagonalStep {
    pub eps: f64,
    pub delta: f64,
    pub report: SolveReport,
}

/// Diagonal of regularized solves and the successive sup-distances between
/// their relative potentials.
#[derive(Clone, Debug)]
pub struct RegularizedDiagonal {
    pub steps: Vec<DiagonalStep>,
    pub trace: Vec<f64>,
}

impl RegularizedDiagonal {
    pub fn last(&self) -> &DiagonalStep {
        self.steps.last().expect("diagonal is never empty")
    }

    /// Sup-distance between the last diagonal potential and `reference`'s.
    pub fn distance_to(&self, reference: &SolveReport) -> f64 {
        sup_distance(&self.last().report.correction, &reference.correction)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check_schedule(name: &str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(name, "schedule is empty"));
    }
    if s.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::invalid(name, "schedule entries must be positive"));
    }
    if s.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(name, "schedule must be strictly decreasing"));
    }
    Ok(())
}

/// Builds the `(δ, ε)` member of the regularized family.
pub fn regularized_problem(base: &MAProblem, scheme: RegularizationScheme, delta: f64, eps: f64) -> Result<MAProblem> {
    let grid = *base.grid();
    let twist = if base.twist.kinks().is_empty() {
        base.twist.clone()
    } else {
        crate::radial::mollify_weight(&base.twist, eps)?
    };
    let mut prob = base.clone();
    match scheme {
        RegularizationScheme::TwistSmoothing => {
            let lift = RadialWeight::fubini_study(grid, delta);
            prob.twist = &twist + &lift;
            prob.background = &base.background + &lift;
            prob.delta = 0.0;
        }
        RegularizationScheme::Zariski => {
            let shift = delta * base.divisor.perturbation_degree();
            prob.twist = twist;
            prob.background = &base.background - &RadialWeight::fubini_study(grid, shift);
            prob.delta = delta;
        }
    }
    prob.mass_target = prob.background.degree();
    prob.eps = eps;
    Ok(prob)
}

/// Solves along the diagonal `ε ↦ (δ_ε, ε)`, where `δ_ε` is the smallest
/// member of `delta_schedule` that is `≥ ε` (the last one if none is).
pub fn regularized_diagonal(
    base: &MAProblem,
    scheme: RegularizationScheme,
    delta_schedule: &[f64],
    eps_schedule: &[f64],
    tol: f64,
) -> Result<RegularizedDiagonal> {
    check_schedule("delta_schedule", delta_schedule)?;
    check_schedule("eps_schedule", eps_schedule)?;
    let mut steps: Vec<DiagonalStep> = Vec::with_capacity(eps_schedule.len());
    let mut trace = Vec::new();
    for &eps in eps_schedule {
        let delta = delta_schedule
            .iter()
            .rev()
            .copied()
            .find(|&d| d >= eps)
            .unwrap_or(*delta_schedule.last().unwrap());
        let prob = regularized_problem(base, scheme, delta, eps)?;
        let warm = steps.last().map(|s| s.report.correction.as_slice());
        let report = solve_ke_ode_from(&prob, tol, DEFAULT_MAX_ITER, warm)?;
        if let Some(prev) = steps.last() {
            trace.push(sup_distance(&prev.report.correction, &report.correction));
        }
        steps.push(DiagonalStep { eps, delta, report });
    }
    if trace.len() >= 2 {
        let first = trace[0];
        let last = *trace.last().unwrap();
        if last > first && last > 10.0 * tol {
            return Err(Error::NonCauchy { trace });
        }
    }
    Ok(RegularizedDiagonal { steps, trace })
}

/// Certificate of a uniform sup bound over a family of solves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniformBound {
    pub bound: f64,
    pub attained_at: usize,
    pub per_member: Vec<f64>,
}

/// `max_δ ‖φ_δ‖_∞` over the relative potentials of the reports.
pub fn uniform_bound_check(reports: &[SolveReport]) -> Result<UniformBound> {
    if reports.is_empty() {
        return Err(Error::invalid("reports", "need at least one solve report"));
    }
    let per_member: Vec<f64> = reports.iter().map(SolveReport::relative_sup).collect();
    let (attained_at, bound) = per_member
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, b)| if b > acc.1 { (i, b) } else { acc });
    if !bound.is_finite() {
        return Err(Error::Configuration("uniform bound is not finite".into()));
    }
    Ok(UniformBound {
        bound,
        attained_at,
        per_member,
    })
}

/// Monotonicity certificate for `ψ_δ − Kδ/(1−δ)`, where
/// `ψ_δ = (φ_δ − log(1−δ)) / (1−δ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaMonotonicity {
    pub deltas: Vec<f64>,
    pub k_shift: f64,
    /// `max (ψ̃_η − ψ̃_δ)` over consecutive pairs `η < δ`; nonpositive when monotone.
    pub max_violation: f64,
}

/// Checks that the shifted potentials decrease as `δ ↓ 0`.
pub fn delta_monotonicity(members: &[(f64, &SolveReport)]) -> Result<DeltaMonotonicity> {
    if members.len() < 2 {
        return Err(Error::invalid("members", "need at least two values of δ"));
    }
    let mut sorted: Vec<(f64, &SolveReport)> = members.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    if sorted.iter().any(|(d, _)| !(0.0..1.0).contains(d)) {
        return Err(Error::invalid("delta", "values must lie in [0, 1)"));
    }
    let psi: Vec<Vec<f64>> = sorted
        .iter()
        .map(|(d, r)| r.correction.iter().map(|v| (v - (1.0 - d).ln()) / (1.0 - d)).collect())
        .collect();
    let k_shift = psi
        .iter()
        .flat_map(|p| p.iter().copied())
        .fold(0.0f64, f64::min);
    let shifted: Vec<Vec<f64>> = sorted
        .iter()
        .zip(&psi)
        .map(|((d, _), p)| p.iter().map(|x| x - k_shift * d / (1.0 - d)).collect())
        .collect();
    let max_violation = shifted
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).fold(f64::NEG_INFINITY, |m, (lo, hi)| m.max(lo - hi)))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DeltaMonotonicity {
        deltas: sorted.iter().map(|(d, _)| *d).collect(),
        k_shift,
        max_violation,
    })
}
