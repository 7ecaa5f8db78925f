//! `p`-step Ricci iteration.
//!
//! Starting from `w_0 = p · φ_A`, each step solves
//!
//! ```text
//! w_m'' = 2π · |s_E|² · exp(w_m − (p−1)/p · w_{m−1} − u_L + σ·u_FS + t)
//! ```
//!
//! in the class of `pA`. The gaps `g_m = ‖w_m − w_{m−1}‖_∞` contract at rate
//! `(p−1)/p`, and the limit satisfies `w_∞ / p − log p = u_KE`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::radial::{DivisorData, RadialGrid, RadialWeight};
use crate::solver::{solve_ke_ode_from, sup_distance, MAProblem, SolveReport, DEFAULT_MAX_ITER};

/// Default stop rule on the sup-norm gap.
pub const DEFAULT_STOP_TOL: f64 = 1e-10;
/// Absolute slack allowed on recorded contraction ratios.
pub const RATIO_SLACK: f64 = 1e-3;
/// Newton tolerance used inside each step.
pub const STEP_TOL: f64 = 1e-11;

/// Geometry shared by every step: twist, divisor and step count `p`.
#[derive(Clone, Debug)]
pub struct RicciConfig {
    pub twist: RadialWeight,
    pub divisor: DivisorData,
    pub p: usize,
}

impl RicciConfig {
    pub fn new(twist: RadialWeight, divisor: DivisorData, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        let cfg = RicciConfig { twist, divisor, p };
        if cfg.degree_a() <= 0.0 {
            return Err(Error::Configuration(format!(
                "deg A = {} must be positive",
                cfg.degree_a()
            )));
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> &RadialGrid {
        self.twist.grid()
    }

    /// `deg A = deg L − 2 − deg E`.
    pub fn degree_a(&self) -> f64 {
        self.twist.degree() - 2.0 - self.divisor.degree(0.0)
    }

    /// `c = (p − 1) / p`.
    pub fn coupling(&self) -> f64 {
        (self.p as f64 - 1.0) / self.p as f64
    }

    /// `φ_A = deg A · u_FS`.
    pub fn phi_a(&self) -> RadialWeight {
        RadialWeight::fubini_study(*self.grid(), self.degree_a())
    }

    /// The direct Kähler-Einstein problem of the same data.
    pub fn ke_problem(&self) -> Result<MAProblem> {
        MAProblem::kahler_einstein(self.twist.clone(), self.divisor.clone())
    }

    /// The problem solved by the step after `previous`.
    pub fn step_problem(&self, previous: &RadialWeight) -> MAProblem {
        MAProblem::new(self.phi_a().scaled(self.p as f64), self.twist.clone())
            .with_divisor(self.divisor.clone())
            .with_coupling(self.coupling(), previous.clone())
    }
}

/// Normalization bookkeeping of one step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Normalization {
    /// `∫ e^{w_m − c w_{m−1} + φ_E − φ_L} dλ` in radial form.
    pub integral: f64,
    /// `p · deg A`.
    pub mass_target: f64,
    /// Additive constant that would move the integral onto the target.
    pub constant: f64,
}

/// Iterate `w_m` together with what produced it.
#[derive(Clone, Debug)]
pub struct RicciState {
    pub config: RicciConfig,
    pub m: usize,
    pub weight: RadialWeight,
    pub previous: Option<RadialWeight>,
    pub report: Option<SolveReport>,
}

impl RicciState {
    /// `w_0 = p · φ_A`.
    pub fn initial(config: RicciConfig) -> Self {
        let weight = config.phi_a().scaled(config.p as f64);
        RicciState {
            config,
            m: 0,
            weight,
            previous: None,
            report: None,
        }
    }

    /// `φ_m = w_m − p · φ_A`.
    pub fn relative_potential(&self) -> Vec<f64> {
        let base = self.config.phi_a().scaled(self.config.p as f64);
        self.weight
            .values()
            .iter()
            .zip(base.values())
            .map(|(w, b)| w - b)
            .collect()
    }

    /// `w_m / p − log p`, the candidate for the Kähler-Einstein weight in the class of `A`.
    pub fn limit_candidate(&self) -> RadialWeight {
        let p = self.config.p as f64;
        self.weight.scaled(1.0 / p).shifted(-p.ln())
    }
}

/// Solves the next step, warm-started from the current relative potential.
pub fn ricci_step(state: &RicciState, tol: f64) -> Result<RicciState> {
    let prob = state.config.step_problem(&state.weight);
    let warm = state.relative_potential();
    let report = solve_ke_ode_from(&prob, tol, DEFAULT_MAX_ITER, Some(&warm))?;
    Ok(RicciState {
        config: state.config.clone(),
        m: state.m + 1,
        weight: report.solution.clone(),
        previous: Some(state.weight.clone()),
        report: Some(report),
    })
}

/// Radial form of the step integral and the mass convention `p · deg A`.
pub fn normalize_constant(state: &RicciState) -> Result<Normalization> {
    let previous = state
        .previous
        .as_ref()
        .ok_or_else(|| Error::invalid("m", "normalization is defined from m = 1 on"))?;
    let prob = state.config.step_problem(previous);
    let g = prob.log_density();
    let grid = *state.config.grid();
    let w = grid.trapezoid_weights();
    let base = prob.background.values();
    let log_integral = crate::numeric::log_sum_exp(
        (0..grid.len()).map(|i| g[i] + state.weight.value(i) - base[i] + w[i].ln()),
    );
    let mass_target = prob.mass_target;
    Ok(Normalization {
        integral: log_integral.exp(),
        mass_target,
        constant: mass_target.ln() - log_integral,
    })
}

/// Per-step record of a run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RicciTrace {
    pub p: usize,
    pub gaps: Vec<f64>,
    /// `ratios[i] = gaps[i + 1] / gaps[i]`, i.e. `r_m` for `m ≥ 2`.
    pub ratios: Vec<f64>,
    pub normalization: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl RicciTrace {
    /// First `m ≥ 2` whose ratio exceeds `(p−1)/p + slack`, ignoring ratios
    /// whose numerator is below `floor`.
    pub fn contraction_violation(&self, slack: f64, floor: f64) -> Option<(usize, f64)> {
        let bound = (self.p as f64 - 1.0) / self.p as f64 + slack;
        self.ratios
            .iter()
            .enumerate()
            .find(|(i, r)| self.gaps[i + 1] >= floor && **r > bound)
            .map(|(i, r)| (i + 2, *r))
    }

    /// Largest `g_m / (((p−1)/p)^{m−1} g_1)` over the trace.
    pub fn envelope_factor(&self) -> f64 {
        let c = (self.p as f64 - 1.0) / self.p as f64;
        let g1 = match self.gaps.first() {
            Some(g) if *g > 0.0 => *g,
            _ => return 0.0,
        };
        if c == 0.0 {
            return 1.0;
        }
        self.gaps
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, g)| g / (c.powi(i as i32) * g1))
            .fold(1.0, f64::max)
    }

    /// CSV with columns `m, gap, ratio, normalization, residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", "gap", "ratio", "normalization", "residual"])?;
        for (i, gap) in self.gaps.iter().enumerate() {
            let ratio = if i == 0 { String::new() } else { fmt_num(self.ratios[i - 1]) };
            w.write_record([
                (i + 1).to_string(),
                fmt_num(*gap),
                ratio,
                fmt_num(self.normalization[i]),
                fmt_num(self.residuals[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterates until `g_m ≤ stop_tol` or `m = m_max`.
///
/// Returns [`Error::ContractionFailure`] when a ratio above the gap floor
/// exceeds `(p−1)/p + RATIO_SLACK`.
pub fn run_ricci(config: RicciConfig, m_max: usize, stop_tol: f64) -> Result<(RicciState, RicciTrace)> {
    if m_max < 2 {
        return Err(Error::invalid("m_max", "need at least two steps"));
    }
    if !stop_tol.is_finite() || stop_tol <= 0.0 {
        return Err(Error::invalid("stop_tol", "must be positive"));
    }
    let mut trace = RicciTrace {
        p: config.p,
        ..Default::default()
    };
    let mut state = RicciState::initial(config);
    let step_tol = STEP_TOL.min(0.1 * stop_tol);
    while state.m < m_max {
        let next = ricci_step(&state, step_tol)?;
        let gap = sup_distance(next.weight.values(), state.weight.values());
        if let Some(&last) = trace.gaps.last() {
            trace.ratios.push(gap / last);
        }
        trace.gaps.push(gap);
        trace.normalization.push(normalize_constant(&next)?.integral);
        trace.residuals.push(next.report.as_ref().map_or(0.0, |r| r.residual));
        state = next;
        if gap <= stop_tol {
            break;
        }
    }
    if let Some((m, ratio)) = trace.contraction_violation(RATIO_SLACK, stop_tol) {
        return Err(Error::ContractionFailure {
            m,
            ratio,
            bound: state.config.coupling() + RATIO_SLACK,
        });
    }
    Ok((state, trace))
}

/// Sup-norm residual of the limit equation `w'' = 2π |s_E|² e^{w/p − u_L + σ u_FS + t}`.
pub fn fixed_point_residual(state: &RicciState) -> Result<f64> {
    let prob = state.config.step_problem(&state.weight);
    let r = prob.residual_of(&state.weight)?;
    Ok(r.iter().fold(0.0, |m, x| m.max(x.abs())))
}

/// Comparison of the Ricci limit with a direct solve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KeComparison {
    /// `sup |w/p − log p − u|` over the smooth parts.
    pub sup_distance: f64,
    /// Lelong numbers of the Kähler-Einstein weight minus those of `w/p`.
    pub lelong_difference: (f64, f64),
}

/// Compares `w_∞/p − log p` with the smooth part of a direct solve of the same data.
pub fn compare_to_ke(state: &RicciState, ke: &SolveReport) -> Result<KeComparison> {
    let cfg = &state.config;
    if ke.grid() != cfg.grid() {
        return Err(Error::Mismatch("Ricci state and solve report use different grids".into()));
    }
    if ke.divisor != cfg.divisor.perturbed(0.0) || ke.eps != 0.0 {
        return Err(Error::Mismatch("Ricci state and solve report use different divisors".into()));
    }
    if (ke.mass_target - cfg.degree_a()).abs() > 1e-9 {
        return Err(Error::Mismatch(format!(
            "solve report lives in a class of degree {}, expected deg A = {}",
            ke.mass_target,
            cfg.degree_a()
        )));
    }
    let candidate = state.limit_candidate();
    let sup = candidate.sup_distance(&ke.solution);
    let bundle = cfg.degree_a() + cfg.divisor.degree(0.0);
    let ricci = crate::radial::lelong_numbers(&candidate, cfg.degree_a());
    let direct = crate::radial::lelong_numbers(&ke.ke_weight, bundle);
    Ok(KeComparison {
        sup_distance: sup,
        lelong_difference: (direct.0 - ricci.0, direct.1 - ricci.1),
    })
}

/// JSON summary of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RicciSummary {
    pub convention_hash: String,
    pub p: usize,
    pub steps: usize,
    pub final_gap: f64,
    pub max_ratio: f64,
    pub envelope_factor: f64,
    pub fixed_point_residual: f64,
    pub converged: bool,
}

impl RicciSummary {
    pub fn new(state: &RicciState, trace: &RicciTrace, stop_tol: f64) -> Result<Self> {
        let final_gap = trace.gaps.last().copied().unwrap_or(f64::INFINITY);
        Ok(RicciSummary {
            convention_hash: crate::convention_hash(),
            p: trace.p,
            steps: state.m,
            final_gap,
            max_ratio: trace.ratios.iter().copied().fold(0.0, f64::max),
            envelope_factor: trace.envelope_factor(),
            fixed_point_residual: fixed_point_residual(state)?,
            converged: final_gap <= stop_tol,
        })
    }
}
