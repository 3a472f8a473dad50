//! Small numerical kernels shared by the solvers: compensated summation,
//! trapezoid quadrature, least-squares lines, tridiagonal elimination and
//! quintic Hermite interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner = compensated_sum(values[1..n - 1].iter().copied());
            dx * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// largest absolute residual over the fitted points
    pub max_residual: f64,
    pub samples: usize,
}

/// Closed-form ordinary least squares for `y = intercept + slope * x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "length mismatch: {} abscissae, {} ordinates",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::FitWindowTooSmall {
            found: x.len(),
            needed: 2,
        });
    }
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxx = compensated_sum(x.iter().map(|&a| (a - mx) * (a - mx)));
    let sxy = compensated_sum(x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)));
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).abs())
        .fold(0.0, f64::max);
    Ok(LinearFit {
        slope,
        intercept,
        max_residual,
        samples: x.len(),
    })
}

/// Fit `y = a e^{b t}` by regressing `ln y` on `t`. Returns the line in log space.
pub fn log_linear_fit(t: &[f64], y: &[f64]) -> Result<LinearFit> {
    let mut logs = Vec::with_capacity(y.len());
    for (&ti, &yi) in t.iter().zip(y) {
        if !(yi > 0.0) {
            return Err(Error::NonPositiveInFit { at: ti, value: yi });
        }
        logs.push(yi.ln());
    }
    linear_fit(t, &logs)
}

/// Thomas algorithm for `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
///
/// `sub[0]` and `sup[n-1]` are ignored. The rhs is overwritten with the solution.
pub fn thomas_solve(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let n = rhs.len();
    debug_assert!(sub.len() == n && diag.len() == n && sup.len() == n);
    if n == 0 {
        return;
    }
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut den = diag[0];
    scratch[0] = if n > 1 { sup[0] / den } else { 0.0 };
    rhs[0] /= den;
    for i in 1..n {
        den = diag[i] - sub[i] * scratch[i - 1];
        if i < n - 1 {
            scratch[i] = sup[i] / den;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Quintic Hermite interpolant on `[x0, x0 + h]` from value, first and second
/// derivative at both ends, evaluated at the unit coordinate `t = (x - x0)/h`.
/// Returns the value and the first derivative in `x`.
pub fn hermite5(t: f64, h: f64, left: [f64; 3], right: [f64; 3]) -> (f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 0.5 * (t3 - 2.0 * t4 + t5);

    let d0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d3 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4;
    let d4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d5 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);

    let value = h0 * left[0]
        + h1 * h * left[1]
        + h2 * h * h * left[2]
        + h3 * right[0]
        + h4 * h * right[1]
        + h5 * h * h * right[2];
    let slope = (d0 * left[0]
        + d1 * h * left[1]
        + d2 * h * h * left[2]
        + d3 * right[0]
        + d4 * h * right[1]
        + d5 * h * h * right[2])
        / h;
    (value, slope)
}

/// `x^p` that uses repeated multiplication when `p` is a small integer, as it
/// is for `n = 3, 4, 6`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power {
    p: f64,
    int: Option<i32>,
}

impl Power {
    pub fn new(p: f64) -> Self {
        let r = p.round();
        let int = (r == p && r.abs() <= 16.0).then_some(r as i32);
        Self { p, int }
    }

    #[inline]
    pub fn of(&self, x: f64) -> f64 {
        match self.int {
            Some(k) => x.powi(k),
            None => x.powf(self.p),
        }
    }
}

/// `(1 - q)^p` evaluated without losing the relative accuracy of `q`.
#[inline]
pub fn pow_one_minus(q: f64, p: f64) -> f64 {
    (p * (-q).ln_1p()).exp()
}

/// `1 - (1 - q)^p`, accurate for tiny `q`.
#[inline]
pub fn one_minus_pow_one_minus(q: f64, p: f64) -> f64 {
    -(p * (-q).ln_1p()).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_recovers_exact_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|&t| 1.5 - 0.25 * t).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope + 0.25).abs() < 1e-14);
        assert!((fit.intercept - 1.5).abs() < 1e-14);
        assert!(fit.max_residual < 1e-14);
    }

    #[test]
    fn log_fit_rejects_nonpositive() {
        let t = [0.0, 1.0, 2.0];
        let y = [1.0, 0.0, 2.0];
        assert!(matches!(
            log_linear_fit(&t, &y),
            Err(Error::NonPositiveInFit { .. })
        ));
    }

    #[test]
    fn thomas_matches_dense_product() {
        let n = 7;
        let sub: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + 0.2 * i as f64).collect();
        let sup: Vec<f64> = (0..n).map(|i| -0.5 + 0.05 * i as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut r = diag[i] * x[i];
                if i > 0 {
                    r += sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    r += sup[i] * x[i + 1];
                }
                r
            })
            .collect();
        let mut scratch = Vec::new();
        thomas_solve(&sub, &diag, &sup, &mut rhs, &mut scratch);
        for i in 0..n {
            assert!((rhs[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn hermite_reproduces_quintic() {
        let f = |x: f64| {
            [
                1.0 + x - 2.0 * x.powi(3) + 0.5 * x.powi(5),
                1.0 - 6.0 * x * x + 2.5 * x.powi(4),
                -12.0 * x + 10.0 * x.powi(3),
            ]
        };
        let (a, h) = (0.3, 0.7);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let (v, s) = hermite5(t, h, f(a), f(a + h));
            let exact = f(a + t * h);
            assert!((v - exact[0]).abs() < 1e-13);
            assert!((s - exact[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut vals = vec![1.0];
        vals.extend(std::iter::repeat_n(1e-16, 10_000));
        let s = compensated_sum(vals.iter().copied());
        assert!((s - (1.0 + 1e-12)).abs() < 1e-18);
    }

    #[test]
    fn trapezoid_constant() {
        let v = vec![1.0; 101];
        assert!((trapezoid(&v, 0.1) - 10.0).abs() < 1e-12);
        assert_eq!(trapezoid(&[], 0.1), 0.0);
    }

    #[test]
    fn integer_power_matches_powf() {
        for p in [5.0, 3.0, 2.0, 7.0 / 3.0, 4.0] {
            let pw = Power::new(p);
            for x in [0.0, 1e-5, 0.3, 1.0, 1.7] {
                let a: f64 = pw.of(x);
                let b: f64 = x.powf(p);
                assert!((a - b).abs() <= 1e-15 * b.max(1e-300), "p={p} x={x}");
            }
        }
    }

    #[test]
    fn near_one_powers() {
        let q = 1e-13;
        let exact = 5.0 * q - 10.0 * q * q;
        assert!((one_minus_pow_one_minus(q, 5.0) - exact).abs() < 1e-27);
        assert!((pow_one_minus(0.5, 3.0) - 0.125).abs() < 1e-15);
    }
}
