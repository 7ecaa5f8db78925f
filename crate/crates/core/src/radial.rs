//! Rotation-invariant data on the Riemann sphere.
//!
//! Everything is written in `t = log|z|²` in the frame near `z = 0`: a weight of
//! a degree-`d` bundle is a convex-or-not profile `u(t)` with asymptotic slopes
//! `(s_-, s_+)`, its curvature density with respect to `dt` is `u''`, and its
//! Lelong numbers at the two fixed points are read off the slopes. See
//! `CONVENTIONS.md` for the full list.

use std::io::Write;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softplus, trapezoid_weights};

/// Uniform symmetric grid `t_0 < … < t_{N-1}` on `[-T, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    half_width: f64,
    nodes: usize,
}

impl RadialGrid {
    pub fn new(half_width: f64, nodes: usize) -> Result<Self> {
        if !half_width.is_finite() || half_width <= 0.0 {
            return Err(Error::invalid(
                "half_width",
                format!("degenerate domain: T = {half_width} must be finite and positive"),
            ));
        }
        if nodes < 3 {
            return Err(Error::invalid("nodes", format!("need at least 3 nodes, got {nodes}")));
        }
        Ok(RadialGrid { half_width, nodes })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    /// Node `t_i`, computed from both ends so that `t_i = -t_{N-1-i}` exactly.
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        let n1 = (self.nodes - 1) as f64;
        (2.0 * i as f64 - n1) / n1 * self.half_width
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.node(i)).collect()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.nodes, self.spacing())
    }

    /// Trapezoid integral of a nodal density against `dt`.
    pub fn integrate(&self, density: &[f64]) -> f64 {
        debug_assert_eq!(density.len(), self.nodes);
        let h = self.spacing();
        let inner: f64 = density[1..self.nodes - 1].iter().sum();
        h * (inner + 0.5 * (density[0] + density[self.nodes - 1]))
    }

    /// Indices of the nodes lying in `[lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = (0..self.nodes).find(|&i| self.node(i) >= lo).unwrap_or(self.nodes);
        let end = (0..self.nodes).rev().find(|&i| self.node(i) <= hi).map_or(start, |i| i + 1);
        start..end.max(start)
    }

    /// Grid with the same spacing policy but twice the resolution.
    pub fn refined(&self) -> RadialGrid {
        RadialGrid {
            half_width: self.half_width,
            nodes: 2 * self.nodes - 1,
        }
    }
}

/// Builds the default uniform grid on `[-T, T]` with `N` nodes.
pub fn make_grid(half_width: f64, nodes: usize) -> Result<RadialGrid> {
    RadialGrid::new(half_width, nodes)
}

/// A slope discontinuity `jump · max(t - at, 0)` that is part of a weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kink {
    pub at: f64,
    pub jump: f64,
}

/// Nodal radial weight with its discrete curvature density and asymptotic slopes.
///
/// `curvature[i]` is the discrete second difference `(u_{i+1} - 2u_i + u_{i-1}) / h²`
/// evaluated in a cancellation-free form for the built-in profiles. Kinks are
/// tracked structurally so that [`mollify_weight`] can soften them.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialWeight {
    grid: RadialGrid,
    values: Vec<f64>,
    curvature: Vec<f64>,
    slope_minus: f64,
    slope_plus: f64,
    kinks: Vec<Kink>,
}

/// Stable `sp(x + η) - 2 sp(x) + sp(x - η)` for the softplus `sp`.
fn softplus_second_difference(x: f64, eta: f64) -> f64 {
    // log(1 + 4 sinh²(η/2) σ(x)(1 - σ(x))), written in log space so that large η
    // (tiny smoothing scales) cannot overflow.
    let log_4sinh2 = eta + 2.0 * (-(-eta).exp_m1()).ln();
    softplus(log_4sinh2 - softplus(-x) - softplus(x))
}

impl RadialWeight {
    pub(crate) fn from_parts(
        grid: RadialGrid,
        values: Vec<f64>,
        curvature: Vec<f64>,
        slopes: (f64, f64),
        kinks: Vec<Kink>,
    ) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        debug_assert_eq!(curvature.len(), grid.len());
        RadialWeight {
            grid,
            values,
            curvature,
            slope_minus: slopes.0,
            slope_plus: slopes.1,
            kinks,
        }
    }

    /// Weight from nodal values; the curvature is taken from second differences
    /// (end nodes copy their neighbour).
    pub fn from_values(grid: RadialGrid, values: Vec<f64>, slopes: (f64, f64)) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(
                "values",
                format!("expected {} nodal values, got {}", grid.len(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) || !slopes.0.is_finite() || !slopes.1.is_finite() {
            return Err(Error::invalid("values", "non-finite weight data"));
        }
        let curvature = second_differences(&values, grid.spacing());
        Ok(Self::from_parts(grid, values, curvature, slopes, Vec::new()))
    }

    /// `k · log(1 + e^t)`, the Fubini-Study weight of `O(k)`.
    pub fn fubini_study(grid: RadialGrid, k: f64) -> Self {
        let h = grid.spacing();
        let values = (0..grid.len()).map(|i| k * softplus(grid.node(i))).collect();
        let curvature = (0..grid.len())
            .map(|i| k * softplus_second_difference(grid.node(i), h) / (h * h))
            .collect();
        Self::from_parts(grid, values, curvature, (0.0, k), Vec::new())
    }

    /// `slope · t + offset`.
    pub fn linear(grid: RadialGrid, slope: f64, offset: f64) -> Self {
        let values = (0..grid.len()).map(|i| slope * grid.node(i) + offset).collect();
        Self::from_parts(grid, values, vec![0.0; grid.len()], (slope, slope), Vec::new())
    }

    pub fn constant(grid: RadialGrid, value: f64) -> Self {
        Self::linear(grid, 0.0, value)
    }

    /// `max(t - at, 0)`: a ring of curvature at `|z|² = e^at`.
    pub fn kink(grid: RadialGrid, at: f64) -> Self {
        let h = grid.spacing();
        let values = (0..grid.len()).map(|i| (grid.node(i) - at).max(0.0)).collect();
        let curvature = (0..grid.len())
            .map(|i| (h - (grid.node(i) - at).abs()).max(0.0) / (h * h))
            .collect();
        Self::from_parts(grid, values, curvature, (0.0, 1.0), vec![Kink { at, jump: 1.0 }])
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn kinks(&self) -> &[Kink] {
        &self.kinks
    }

    pub fn slopes(&self) -> (f64, f64) {
        (self.slope_minus, self.slope_plus)
    }

    /// `s_+ - s_-`.
    pub fn degree(&self) -> f64 {
        self.slope_plus - self.slope_minus
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_parts(
            self.grid,
            self.values.iter().map(|v| factor * v).collect(),
            self.curvature.iter().map(|v| factor * v).collect(),
            (factor * self.slope_minus, factor * self.slope_plus),
            self.kinks
                .iter()
                .map(|k| Kink {
                    at: k.at,
                    jump: factor * k.jump,
                })
                .collect(),
        )
    }

    pub fn shifted(&self, constant: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += constant);
        out
    }

    /// Adds a bounded nodal correction that obeys homogeneous Neumann conditions.
    pub(crate) fn with_correction(&self, correction: &[f64]) -> Self {
        let h = self.grid.spacing();
        let n = self.grid.len();
        let mut values = self.values.clone();
        let mut curvature = self.curvature.clone();
        for i in 0..n {
            values[i] += correction[i];
            curvature[i] += neumann_second_difference(correction, i, h);
        }
        Self::from_parts(self.grid, values, curvature, self.slopes(), Vec::new())
    }

    /// Most negative discrete curvature.
    pub fn min_curvature(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Radial plurisubharmonicity: every second difference is `≥ -tol`.
    pub fn is_positively_curved(&self, tol: f64) -> bool {
        self.min_curvature() >= -tol
    }

    /// First derivative by central differences (one-sided at the ends).
    pub fn derivative(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        let n = self.grid.len();
        let u = &self.values;
        (0..n)
            .map(|i| match i {
                0 => (u[1] - u[0]) / h,
                i if i == n - 1 => (u[n - 1] - u[n - 2]) / h,
                _ => (u[i + 1] - u[i - 1]) / (2.0 * h),
            })
            .collect()
    }

    /// End slopes measured from the nodal data.
    pub fn measured_end_slopes(&self) -> (f64, f64) {
        let h = self.grid.spacing();
        let n = self.grid.len();
        (
            (self.values[1] - self.values[0]) / h,
            (self.values[n - 1] - self.values[n - 2]) / h,
        )
    }

    pub fn sup_distance(&self, other: &RadialWeight) -> f64 {
        self.sup_distance_on(other, 0..self.grid.len())
    }

    pub fn sup_distance_on(&self, other: &RadialWeight, range: std::ops::Range<usize>) -> f64 {
        assert_eq!(self.grid, other.grid, "weights live on different grids");
        range
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_record(&self) -> WeightRecord {
        WeightRecord {
            convention_hash: crate::convention_hash(),
            half_width: self.grid.half_width(),
            nodes: self.grid.len(),
            spacing: self.grid.spacing(),
            slope_minus: self.slope_minus,
            slope_plus: self.slope_plus,
            degree: self.degree(),
            kinks: self.kinks.clone(),
            values: self.values.clone(),
        }
    }

    /// CSV with columns `t, u, u', u''`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "u", "du", "d2u"])?;
        let du = self.derivative();
        for i in 0..self.grid.len() {
            w.write_record([
                crate::io::fmt_num(self.grid.node(i)),
                crate::io::fmt_num(self.values[i]),
                crate::io::fmt_num(du[i]),
                crate::io::fmt_num(self.curvature[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn combine(a: &RadialWeight, b: &RadialWeight, sign: f64) -> RadialWeight {
    assert_eq!(a.grid, b.grid, "weights live on different grids");
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x + sign * y).collect();
    let curvature = a.curvature.iter().zip(&b.curvature).map(|(x, y)| x + sign * y).collect();
    let mut kinks = a.kinks.clone();
    kinks.extend(b.kinks.iter().map(|k| Kink {
        at: k.at,
        jump: sign * k.jump,
    }));
    RadialWeight::from_parts(
        a.grid,
        values,
        curvature,
        (a.slope_minus + sign * b.slope_minus, a.slope_plus + sign * b.slope_plus),
        kinks,
    )
}

impl Add for &RadialWeight {
    type Output = RadialWeight;
    fn add(self, rhs: &RadialWeight) -> RadialWeight {
        combine(self, rhs, 1.0)
    }
}

impl Sub for &RadialWeight {
    type Output = RadialWeight;
    fn sub(self, rhs: &RadialWeight) -> RadialWeight {
        combine(self, rhs, -1.0)
    }
}

impl Neg for &RadialWeight {
    type Output = RadialWeight;
    fn neg(self) -> RadialWeight {
        self.scaled(-1.0)
    }
}

/// Serializable weight profile together with grid metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightRecord {
    pub convention_hash: String,
    pub half_width: f64,
    pub nodes: usize,
    pub spacing: f64,
    pub slope_minus: f64,
    pub slope_plus: f64,
    pub degree: f64,
    pub kinks: Vec<Kink>,
    pub values: Vec<f64>,
}

pub(crate) fn second_differences(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    out
}

/// Second difference with ghost reflection `v_{-1} = v_1`, `v_N = v_{N-2}`.
#[inline]
pub(crate) fn neumann_second_difference(v: &[f64], i: usize, h: f64) -> f64 {
    let n = v.len();
    let left = if i == 0 { v[1] } else { v[i - 1] };
    let right = if i == n - 1 { v[n - 2] } else { v[i + 1] };
    (left - 2.0 * v[i] + right) / (h * h)
}

/// `k · log(1 + e^t)` on the grid.
pub fn fs_weight(k: f64, grid: RadialGrid) -> Result<RadialWeight> {
    if !k.is_finite() || k < 0.0 {
        return Err(Error::invalid("k", format!("twist degree must be a nonnegative number, got {k}")));
    }
    Ok(RadialWeight::fubini_study(grid, k))
}

/// Absolute tolerance used by [`weight_mass`] when comparing declared and integrated mass.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Total curvature mass `s_+ - s_-`, cross-checked against the trapezoid
/// integral of the discrete curvature.
pub fn weight_mass(w: &RadialWeight) -> Result<f64> {
    let declared = w.degree();
    if !declared.is_finite() {
        return Err(Error::invalid("slopes", "asymptotic slopes must be finite"));
    }
    let integrated = w.grid().integrate(w.curvature());
    if (integrated - declared).abs() > MASS_TOLERANCE {
        return Err(Error::InconsistentWeight { declared, integrated });
    }
    Ok(declared)
}

/// Lelong numbers `(ν_0, ν_∞) = (s_-, d - s_+)`, where `d` is the bundle degree.
pub fn lelong_numbers(w: &RadialWeight, bundle_degree: f64) -> (f64, f64) {
    (w.slope_minus, bundle_degree - w.slope_plus)
}

/// Replaces every tracked kink `jump · max(t - a, 0)` by `jump · ε log(1 + e^{(t-a)/ε})`.
///
/// For a convex weight the result is convex, keeps both slopes, lies above
/// `w`, and decreases to `w` as `ε ↓ 0` with `sup |w_ε - w| = ε log 2 · Σ jumps`.
pub fn mollify_weight(w: &RadialWeight, eps: f64) -> Result<RadialWeight> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::invalid("eps", format!("smoothing scale must be positive, got {eps}")));
    }
    if !w.is_positively_curved(1e-9) {
        return Err(Error::invalid("weight", "mollification requires a convex weight"));
    }
    let grid = *w.grid();
    let h = grid.spacing();
    let mut values = w.values.clone();
    let mut curvature = w.curvature.clone();
    for kink in &w.kinks {
        for i in 0..grid.len() {
            let x = grid.node(i) - kink.at;
            values[i] += kink.jump * eps * softplus(-x.abs() / eps);
            let sharp = (h - x.abs()).max(0.0) / (h * h);
            let smooth = eps * softplus_second_difference(x / eps, h / eps) / (h * h);
            curvature[i] += kink.jump * (smooth - sharp);
        }
    }
    Ok(RadialWeight::from_parts(grid, values, curvature, w.slopes(), Vec::new()))
}

/// One of the two torus-fixed points of the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedPoint {
    Zero,
    Infinity,
}

impl FixedPoint {
    /// `log |s|²` of the Fubini-Study frame of the point's divisor.
    #[inline]
    pub fn log_frame_norm(self, t: f64) -> f64 {
        match self {
            FixedPoint::Zero => -softplus(-t),
            FixedPoint::Infinity => -softplus(t),
        }
    }
}

/// `a_i [p_i]` together with the coefficient `c_i` of the same point in the
/// Kodaira perturbation divisor, so that `a_i^δ = a_i + δ c_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisorComponent {
    pub point: FixedPoint,
    pub coefficient: f64,
    #[serde(default)]
    pub perturbation: f64,
}

/// Effective ℚ-divisor supported on `{0, ∞}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DivisorData {
    components: Vec<DivisorComponent>,
}

impl DivisorData {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(components: Vec<DivisorComponent>) -> Result<Self> {
        let mut out = Self::empty();
        for c in components {
            out = out.with_component(c)?;
        }
        Ok(out)
    }

    /// `a [point]` with no perturbation part.
    pub fn point(point: FixedPoint, coefficient: f64) -> Result<Self> {
        Self::new(vec![DivisorComponent {
            point,
            coefficient,
            perturbation: 0.0,
        }])
    }

    /// Adds a component, merging coefficients at an already present point.
    pub fn with_component(mut self, c: DivisorComponent) -> Result<Self> {
        if !c.coefficient.is_finite() || c.coefficient < 0.0 {
            return Err(Error::invalid(
                "divisor coefficient",
                format!("must be finite and nonnegative, got {}", c.coefficient),
            ));
        }
        if !c.perturbation.is_finite() || c.perturbation < 0.0 {
            return Err(Error::invalid(
                "divisor perturbation",
                format!("must be finite and nonnegative, got {}", c.perturbation),
            ));
        }
        match self.components.iter_mut().find(|e| e.point == c.point) {
            Some(e) => {
                e.coefficient += c.coefficient;
                e.perturbation += c.perturbation;
            }
            None => self.components.push(c),
        }
        Ok(self)
    }

    pub fn components(&self) -> &[DivisorComponent] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.iter().all(|c| c.coefficient == 0.0)
    }

    /// `a_i + δ c_i` at the given point.
    pub fn coefficient(&self, point: FixedPoint, delta: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.point == point)
            .map(|c| c.coefficient + delta * c.perturbation)
            .sum()
    }

    /// `deg E_δ = Σ (a_i + δ c_i)`.
    pub fn degree(&self, delta: f64) -> f64 {
        self.components.iter().map(|c| c.coefficient + delta * c.perturbation).sum()
    }

    /// `E_δ`: the divisor with coefficients `a_i + δ c_i` and no further perturbation part.
    pub fn perturbed(&self, delta: f64) -> DivisorData {
        DivisorData {
            components: self
                .components
                .iter()
                .map(|c| DivisorComponent {
                    point: c.point,
                    coefficient: c.coefficient + delta * c.perturbation,
                    perturbation: 0.0,
                })
                .collect(),
        }
    }

    /// `Σ c_i`, the degree of the perturbation divisor.
    pub fn perturbation_degree(&self) -> f64 {
        self.components.iter().map(|c| c.perturbation).sum()
    }

    /// Every coefficient strictly below 1.
    pub fn is_klt(&self) -> bool {
        self.components.iter().all(|c| c.coefficient < 1.0)
    }

    /// `Σ a_i log(|s_i|² + ε²)` at `t`.
    pub fn log_frame_at(&self, t: f64, eps: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let l = c.point.log_frame_norm(t);
                let l = if eps > 0.0 {
                    crate::numeric::log_add_exp(l, 2.0 * eps.ln())
                } else {
                    l
                };
                c.coefficient * l
            })
            .sum()
    }

    /// Nodal profile of `Σ a_i log(|s_i|² + ε²)`.
    pub fn log_frame(&self, grid: &RadialGrid, eps: f64) -> Vec<f64> {
        (0..grid.len()).map(|i| self.log_frame_at(grid.node(i), eps)).collect()
    }

    /// Asymptotic slopes of [`Self::log_frame`].
    pub fn log_frame_slopes(&self, eps: f64) -> (f64, f64) {
        if eps > 0.0 {
            return (0.0, 0.0);
        }
        (
            self.coefficient(FixedPoint::Zero, 0.0),
            -self.coefficient(FixedPoint::Infinity, 0.0),
        )
    }

    /// The singular weight `a_0 · t` of the divisor (frame near zero).
    pub fn singular_weight(&self, grid: RadialGrid) -> RadialWeight {
        RadialWeight::linear(grid, self.coefficient(FixedPoint::Zero, 0.0), 0.0)
    }
}

/// Profile of `Π_i (|s_i|² + ε²)^{a_i}` with Fubini-Study frames.
pub fn divisor_frame_norm(divisor: &DivisorData, grid: &RadialGrid, eps: f64) -> Result<Vec<f64>> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::invalid("eps", format!("must be finite and nonnegative, got {eps}")));
    }
    Ok(divisor.log_frame(grid, eps).into_iter().map(f64::exp).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_examples() {
        let g = make_grid(30.0, 4096).unwrap();
        assert_abs_diff_eq!(g.spacing(), 60.0 / 4095.0, epsilon = 1e-15);
        let g = make_grid(1.0, 3).unwrap();
        assert_eq!(g.nodes(), vec![-1.0, 0.0, 1.0]);
        assert!(make_grid(0.0, 10).is_err());
        assert!(make_grid(f64::NAN, 10).is_err());
        assert!(make_grid(1.0, 2).is_err());
    }

    #[test]
    fn grid_is_symmetric() {
        let g = make_grid(7.3, 1001).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.node(i), -g.node(g.len() - 1 - i));
        }
        assert_eq!(g.node(500), 0.0);
    }

    #[test]
    fn window_selects_closed_interval() {
        let g = make_grid(1.0, 5).unwrap();
        assert_eq!(g.window(-0.5, 0.5), 1..4);
        assert_eq!(g.window(-10.0, 10.0), 0..5);
    }

    #[test]
    fn fs_weight_examples() {
        let g = make_grid(30.0, 4097).unwrap();
        let w = fs_weight(4.0, g).unwrap();
        assert_abs_diff_eq!(w.value(2048), 4.0 * 2f64.ln(), epsilon = 1e-14);
        assert_eq!(fs_weight(3.0, g).unwrap().degree(), 3.0);
        assert!(w.is_positively_curved(0.0));
        assert!(fs_weight(-1.0, g).is_err());
    }

    #[test]
    fn closed_form_curvature_matches_differences_where_cancellation_is_harmless() {
        let g = make_grid(5.0, 201).unwrap();
        let w = RadialWeight::fubini_study(g, 3.0);
        let naive = second_differences(w.values(), g.spacing());
        for i in 1..g.len() - 1 {
            assert_abs_diff_eq!(w.curvature()[i], naive[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn mass_of_fs_weights_is_degree() {
        let g = make_grid(30.0, 4096).unwrap();
        for k in 1..=6 {
            let w = fs_weight(k as f64, g).unwrap();
            assert_abs_diff_eq!(weight_mass(&w).unwrap(), k as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(g.integrate(w.curvature()), k as f64, epsilon = 1e-10);
        }
        let shifted = fs_weight(3.0, g).unwrap().shifted(2.5);
        assert_eq!(weight_mass(&shifted).unwrap(), 3.0);
    }

    #[test]
    fn mass_of_kinked_weight_by_integration() {
        let g = make_grid(30.0, 4096).unwrap();
        let k = 4.0;
        let w = &RadialWeight::fubini_study(g, k - 1.0) + &RadialWeight::kink(g, 0.0);
        // Oracle: the trapezoid integral of the discrete u'' telescopes to the end slopes.
        let integrated = g.integrate(w.curvature());
        assert_abs_diff_eq!(integrated, k, epsilon = 1e-10);
        assert_eq!(weight_mass(&w).unwrap(), k);
    }

    #[test]
    fn inconsistent_weight_is_rejected() {
        let g = make_grid(10.0, 501).unwrap();
        let w = RadialWeight::fubini_study(g, 2.0);
        let lying = RadialWeight::from_parts(g, w.values().to_vec(), w.curvature().to_vec(), (0.0, 3.0), vec![]);
        assert!(matches!(weight_mass(&lying), Err(Error::InconsistentWeight { .. })));
    }

    #[test]
    fn lelong_examples() {
        let g = make_grid(30.0, 1025).unwrap();
        let k = 4.0;
        assert_eq!(lelong_numbers(&RadialWeight::fubini_study(g, k), k), (0.0, 0.0));
        let a = 0.7;
        let w = &RadialWeight::linear(g, a, 0.0) + &RadialWeight::fubini_study(g, k);
        assert_eq!(lelong_numbers(&w, k + a).0, a);
        let kinked = &RadialWeight::fubini_study(g, k - 1.0) + &RadialWeight::kink(g, 0.0);
        assert_eq!(lelong_numbers(&kinked, k), (0.0, 0.0));
    }

    #[test]
    fn positivity_flag_detects_concavity() {
        let g = make_grid(10.0, 401).unwrap();
        let fs = RadialWeight::fubini_study(g, 2.0);
        assert!(fs.is_positively_curved(1e-12));
        let bad: Vec<f64> = (0..g.len()).map(|i| fs.value(i) - 0.5 * g.node(i).powi(2)).collect();
        let bad = RadialWeight::from_values(g, bad, (0.0, 2.0)).unwrap();
        assert!(!bad.is_positively_curved(1e-6));
    }

    #[test]
    fn mollify_examples() {
        let g = make_grid(10.0, 2001).unwrap();
        let smooth = RadialWeight::fubini_study(g, 3.0);
        let m = mollify_weight(&smooth, 0.3).unwrap();
        assert_eq!(m.sup_distance(&smooth), 0.0);

        let kink = RadialWeight::kink(g, 0.0);
        let eps = 0.05;
        let m = mollify_weight(&kink, eps).unwrap();
        assert_abs_diff_eq!(m.value(1000), eps * 2f64.ln(), epsilon = 1e-15);
        assert_eq!(m.slopes(), kink.slopes());
        assert!(m.is_positively_curved(0.0));

        let m_small = mollify_weight(&kink, 0.01).unwrap();
        for i in 0..g.len() {
            assert!(m_small.value(i) <= m.value(i));
            assert!(m_small.value(i) >= kink.value(i));
        }
        assert!(mollify_weight(&kink, 0.0).is_err());
        assert!(mollify_weight(&kink, -1.0).is_err());
    }

    #[test]
    fn mollified_kink_matches_logistic_convolution() {
        // Oracle: ∫ max(t - x, 0) ρ_ε(x) dx with the logistic density of scale ε.
        let eps = 0.2;
        let g = make_grid(3.0, 61).unwrap();
        let m = mollify_weight(&RadialWeight::kink(g, 0.0), eps).unwrap();
        for i in (0..g.len()).step_by(6) {
            let t = g.node(i);
            let n = 200_000;
            let (lo, hi) = (-40.0 * eps, 40.0 * eps);
            let dx = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for q in 0..=n {
                let x = lo + q as f64 * dx;
                let s = crate::numeric::logistic(x / eps);
                let density = s * (1.0 - s) / eps;
                let wq = if q == 0 || q == n { 0.5 } else { 1.0 };
                acc += wq * (t - x).max(0.0) * density;
            }
            assert_abs_diff_eq!(m.value(i), acc * dx, epsilon = 1e-7);
        }
    }

    #[test]
    fn mollification_rate_is_linear_in_eps() {
        let g = make_grid(10.0, 2001).unwrap();
        let w = &RadialWeight::fubini_study(g, 2.0) + &RadialWeight::kink(g, 1.0);
        for eps in [0.1, 0.01, 0.001] {
            let d = mollify_weight(&w, eps).unwrap().sup_distance(&w);
            assert!(d <= eps * 2f64.ln() + 1e-12);
        }
    }

    #[test]
    fn frame_norm_examples() {
        let g = make_grid(40.0, 801).unwrap();
        let empty = divisor_frame_norm(&DivisorData::empty(), &g, 0.0).unwrap();
        assert!(empty.iter().all(|&v| v == 1.0));

        let d = DivisorData::point(FixedPoint::Zero, 0.5).unwrap();
        let f = divisor_frame_norm(&d, &g, 0.0).unwrap();
        let t0 = g.node(0);
        assert_abs_diff_eq!(f[0] / (0.5 * t0).exp(), 1.0, epsilon = 1e-12);

        let f = divisor_frame_norm(&d, &g, 0.1).unwrap();
        assert_abs_diff_eq!(f[0], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn divisor_validation_and_bookkeeping() {
        assert!(DivisorData::point(FixedPoint::Zero, -0.1).is_err());
        let d = DivisorData::new(vec![
            DivisorComponent {
                point: FixedPoint::Zero,
                coefficient: 0.5,
                perturbation: 1.0,
            },
            DivisorComponent {
                point: FixedPoint::Infinity,
                coefficient: 0.25,
                perturbation: 0.0,
            },
        ])
        .unwrap();
        assert_eq!(d.degree(0.0), 0.75);
        assert_eq!(d.degree(0.1), 0.85);
        assert_eq!(d.coefficient(FixedPoint::Zero, 0.1), 0.6);
        assert!(d.is_klt());
        assert!(!DivisorData::point(FixedPoint::Infinity, 1.0).unwrap().is_klt());
        assert_eq!(d.log_frame_slopes(0.0), (0.5, -0.25));
        assert_eq!(d.log_frame_slopes(0.1), (0.0, 0.0));
    }
}
