//! Small scalar kernels shared by every module: stable softplus/logistic,
//! log-sum-exp, trapezoid weights and a tridiagonal solver.

/// `log(1 + e^x)` without overflow or cancellation.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `e^x / (1 + e^x)`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log Σ e^{x_i}`; `-∞` for an empty iterator.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = iter.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Composite trapezoid weights for `n` equally spaced nodes of spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}

/// `log(n!)` by direct summation; exact enough for the level counts used here.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` couples row `i + 1` to column `i`, `upper[i]` couples row `i` to
/// column `i + 1`. Returns `None` on a zero pivot.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    debug_assert_eq!(lower.len() + 1, n);
    debug_assert_eq!(upper.len() + 1, n);
    debug_assert_eq!(rhs.len(), n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return None;
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        if i < n - 1 {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_handles_huge_spread() {
        let v = log_sum_exp([1000.0, 0.0, -1000.0]);
        assert!((v - 1000.0).abs() < 1e-12);
        assert_eq!(log_sum_exp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
    }

    #[test]
    fn tridiagonal_matches_dense_solve() {
        // [[4,1,0],[2,5,1],[0,3,6]] x = [1,2,3]
        let x = solve_tridiagonal(&[2.0, 3.0], &[4.0, 5.0, 6.0], &[1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        let r0 = 4.0 * x[0] + x[1] - 1.0;
        let r1 = 2.0 * x[0] + 5.0 * x[1] + x[2] - 2.0;
        let r2 = 3.0 * x[1] + 6.0 * x[2] - 3.0;
        assert!(r0.abs() + r1.abs() + r2.abs() < 1e-14);
    }

    #[test]
    fn ln_factorial_small_values() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-13);
    }
}
