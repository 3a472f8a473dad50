//! Model parameters, exponent algebra and the closed-form rates that govern
//! every asymptotic law of the merged-soliton construction.
//!
//! Three coordinate systems appear in this crate:
//!
//! * planar: the radial conformal factor on R^n,
//! * unnormalized cylindrical: `(u^p)_t = u_xx + alpha u^p - beta u`,
//! * normalized cylindrical: `(u^p)_t = u_xx + u^p - u`.
//!
//! All solvers work in normalized coordinates; [`NormalizationMap`] converts
//! to the unnormalized ones where the geometric formulas live.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p = (n+2)/(n-2)` for a dimension `n >= 3`.
pub fn exponent_p(n: u32) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "dimension n = {n} must be at least 3"
        )));
    }
    let n = f64::from(n);
    Ok((n + 2.0) / (n - 2.0))
}

/// Smallest speed for which the linearized tail has real roots.
pub fn critical_speed(p: f64) -> f64 {
    2.0 * (p - 1.0).sqrt() / p
}

/// Smaller root of `gamma^2 - lambda p gamma + (p-1) = 0`.
///
/// Speeds below [`critical_speed`] are rejected rather than clamped.
pub fn gamma_of_lambda(lambda: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need p > 1 and finite lambda, got p = {p}, lambda = {lambda}"
        )));
    }
    let critical = critical_speed(p);
    if lambda < critical {
        return Err(Error::OscillatoryRegime {
            lambda,
            p,
            critical,
        });
    }
    // rounding can push the discriminant of the double root just below zero
    let disc = (lambda * lambda * p * p - 4.0 * (p - 1.0)).max(0.0);
    // Vieta form avoids cancellation for large lambda
    Ok(2.0 * (p - 1.0) / (lambda * p + disc.sqrt()))
}

/// Larger root of the same quadratic.
pub fn gamma_large_of_lambda(lambda: f64, p: f64) -> Result<f64> {
    let small = gamma_of_lambda(lambda, p)?;
    Ok((p - 1.0) / small)
}

/// Inverse of [`gamma_of_lambda`] on the small-root branch.
pub fn lambda_of_gamma(gamma: f64, p: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must be positive"
        )));
    }
    Ok((gamma * gamma + (p - 1.0)) / (p * gamma))
}

/// Exponent of the right tail `1 - v ~ C e^{-gamma x}` of the actual profile.
///
/// For `lambda > 1` this is the small root. At `lambda = 1` the profile is
/// the Barenblatt solution whose tail decays at `p - 1`, which is the larger
/// root when `p > 2` (and coincides with the small root otherwise).
pub fn tail_exponent(lambda: f64, p: f64) -> Result<f64> {
    if lambda == 1.0 {
        return Ok(p - 1.0);
    }
    gamma_of_lambda(lambda, p)
}

/// Merge rate `d = (gamma1 gamma2 + (p-1)) / p`.
pub fn merge_rate_d(gamma1: f64, gamma2: f64, p: f64) -> Result<f64> {
    if !(gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tail exponents must be positive, got {gamma1}, {gamma2}"
        )));
    }
    Ok((gamma1 * gamma2 + (p - 1.0)) / p)
}

/// Coordinates of the four-parameter family, plus the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u32,
    pub p: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub h: f64,
    pub h_prime: f64,
}

impl ModelParams {
    pub fn new(n: u32, lambda: f64, lambda_prime: f64, h: f64, h_prime: f64) -> Result<Self> {
        let p = exponent_p(n)?;
        for (name, l) in [("lambda", lambda), ("lambda_prime", lambda_prime)] {
            if !(l >= 1.0) || !l.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {l} must be >= 1"
                )));
            }
        }
        if !h.is_finite() || !h_prime.is_finite() {
            return Err(Error::InvalidParameter("shifts must be finite".into()));
        }
        Ok(Self {
            n,
            p,
            lambda,
            lambda_prime,
            h,
            h_prime,
        })
    }

    /// The construction needs both speeds strictly above 1.
    pub fn is_construction_regime(&self) -> bool {
        self.lambda > 1.0 && self.lambda_prime > 1.0
    }

    pub fn decay(&self) -> Result<(f64, f64, f64)> {
        let g1 = tail_exponent(self.lambda, self.p)?;
        let g2 = tail_exponent(self.lambda_prime, self.p)?;
        Ok((g1, g2, merge_rate_d(g1, g2, self.p)?))
    }
}

/// Tail data of one soliton, completed with the merge rate of the pair it
/// belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayData {
    pub gamma: f64,
    pub c_tail: f64,
    pub d: f64,
}

impl DecayData {
    /// `d` set to the self-pair value `(gamma^2 + p - 1)/p`.
    pub fn single(gamma: f64, c_tail: f64, p: f64) -> Result<Self> {
        Ok(Self {
            gamma,
            c_tail,
            d: merge_rate_d(gamma, gamma, p)?,
        })
    }

    pub fn paired_with(&self, other_gamma: f64, p: f64) -> Result<Self> {
        Ok(Self {
            d: merge_rate_d(self.gamma, other_gamma, p)?,
            ..*self
        })
    }
}

/// Scalings between unnormalized and normalized cylindrical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub p: f64,
    /// time-scale constant `p/(p-1) = (n+2)/4`
    pub alpha: f64,
    /// space-scale constant `(n-2)^2/4`
    pub beta: f64,
}

impl NormalizationMap {
    pub fn for_dimension(n: u32) -> Result<Self> {
        let p = exponent_p(n)?;
        let nf = f64::from(n);
        Ok(Self {
            p,
            alpha: p / (p - 1.0),
            beta: (nf - 2.0) * (nf - 2.0) / 4.0,
        })
    }

    /// `(x_raw, tau_raw) -> (x_raw sqrt(beta), tau_raw alpha)`.
    pub fn normalize(&self, x_raw: f64, tau_raw: f64) -> (f64, f64) {
        (x_raw * self.beta.sqrt(), tau_raw * self.alpha)
    }

    pub fn denormalize(&self, x: f64, tau: f64) -> (f64, f64) {
        (x / self.beta.sqrt(), tau / self.alpha)
    }

    /// `A = (alpha/beta)^{1/(p-1)}`, so that `u = A u_raw` in matching
    /// coordinates.
    pub fn amplitude(&self) -> f64 {
        (self.alpha / self.beta).powf(1.0 / (self.p - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Both roots straight from the textbook quadratic formula.
    fn quadratic_roots(lambda: f64, p: f64) -> (f64, f64) {
        let b = -lambda * p;
        let c = p - 1.0;
        let disc = (b * b - 4.0 * c).max(0.0);
        ((-b - disc.sqrt()) / 2.0, (-b + disc.sqrt()) / 2.0)
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(exponent_p(3).unwrap(), 5.0);
        assert_eq!(exponent_p(4).unwrap(), 3.0);
        assert_eq!(exponent_p(6).unwrap(), 2.0);
        assert!(exponent_p(2).is_err());
        assert!(exponent_p(0).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert!((gamma_of_lambda(1.0, 5.0).unwrap() - 1.0).abs() < 1e-14);
        let (small, _) = quadratic_roots(2.0, 5.0);
        let g = gamma_of_lambda(2.0, 5.0).unwrap();
        assert!((g - small).abs() < 1e-13);
        assert!((g - 0.417_424_305_044_160_5).abs() < 1e-12);
        for p in [5.0, 3.0, 2.0, 7.0 / 3.0] {
            let lc = critical_speed(p);
            let g = gamma_of_lambda(lc, p).unwrap();
            assert!((g - (p - 1.0).sqrt()).abs() < 1e-7, "p={p} g={g}");
            assert!((g - lc * p / 2.0).abs() < 1e-7);
        }
    }

    #[test]
    fn oscillatory_regime_is_an_error() {
        let p = 5.0;
        let lc = critical_speed(p);
        match gamma_of_lambda(lc - 1e-12, p) {
            Err(Error::OscillatoryRegime { .. }) => {}
            other => panic!("expected oscillatory error, got {other:?}"),
        }
        let msg = gamma_of_lambda(0.5, p).unwrap_err().to_string();
        assert!(msg.contains("oscillatory"));
    }

    #[test]
    fn lambda_examples() {
        assert!((lambda_of_gamma(1.0, 5.0).unwrap() - 1.0).abs() < 1e-15);
        for p in [5.0, 3.0, 2.0] {
            let g = (p - 1.0f64).sqrt();
            assert!((lambda_of_gamma(g, p).unwrap() - critical_speed(p)).abs() < 1e-14);
        }
        for l in [1.1, 1.5, 3.0] {
            let g = gamma_of_lambda(l, 5.0).unwrap();
            assert!((lambda_of_gamma(g, 5.0).unwrap() - l).abs() < 1e-12);
        }
        assert!(lambda_of_gamma(0.0, 5.0).is_err());
        assert!(lambda_of_gamma(-1.0, 5.0).is_err());
    }

    #[test]
    fn merge_rate_examples() {
        assert!((merge_rate_d(1.0, 1.0, 5.0).unwrap() - 1.0).abs() < 1e-15);
        let g = gamma_of_lambda(1.2, 5.0).unwrap();
        assert!((g - (3.0 - 5f64.sqrt())).abs() < 1e-13);
        let d = merge_rate_d(g, g, 5.0).unwrap();
        let expected = ((3.0 - 5f64.sqrt()).powi(2) + 4.0) / 5.0;
        assert!((d - expected).abs() < 1e-13);
        assert!((d - 0.916_718).abs() < 1e-6);
        assert!(merge_rate_d(0.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn tail_exponent_of_barenblatt_is_p_minus_one() {
        assert_eq!(tail_exponent(1.0, 5.0).unwrap(), 4.0);
        assert_eq!(tail_exponent(1.0, 2.0).unwrap(), 1.0);
        let g = tail_exponent(1.2, 5.0).unwrap();
        assert!((g - gamma_of_lambda(1.2, 5.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        let map = NormalizationMap::for_dimension(3).unwrap();
        assert_eq!(map.beta, 0.25);
        assert_eq!(map.alpha, 1.25);
        assert_eq!(map.normalize(0.0, 0.0), (0.0, 0.0));
        assert!((map.normalize(2.0, 0.0).0 - 1.0).abs() < 1e-15);
        let map4 = NormalizationMap::for_dimension(4).unwrap();
        assert_eq!(map4.alpha, 1.5);
        assert_eq!(map4.beta, 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(3, 1.2, 1.5, 0.0, 0.0).is_ok());
        assert!(ModelParams::new(3, 0.9, 1.5, 0.0, 0.0).is_err());
        assert!(ModelParams::new(2, 1.2, 1.5, 0.0, 0.0).is_err());
        let p = ModelParams::new(3, 1.0, 1.5, 0.0, 0.0).unwrap();
        assert!(!p.is_construction_regime());
    }

    proptest! {
        #[test]
        fn vieta_product(lambda in 1.0f64..6.0, n in 3u32..12) {
            let p = exponent_p(n).unwrap();
            let small = gamma_of_lambda(lambda, p).unwrap();
            let disc = (lambda * lambda * p * p - 4.0 * (p - 1.0)).max(0.0);
            let large = (lambda * p + disc.sqrt()) / 2.0;
            prop_assert!((small * large - (p - 1.0)).abs() < 1e-10);
            prop_assert!(small <= large);
            prop_assert!(small > 0.0);
        }

        #[test]
        fn merge_rate_symmetric_and_increasing(
            g1 in 0.01f64..5.0, g2 in 0.01f64..5.0, bump in 1e-3f64..1.0, n in 3u32..10,
        ) {
            let p = exponent_p(n).unwrap();
            let d = merge_rate_d(g1, g2, p).unwrap();
            prop_assert!((d - merge_rate_d(g2, g1, p).unwrap()).abs() < 1e-15);
            prop_assert!(merge_rate_d(g1 + bump, g2, p).unwrap() > d);
            prop_assert!(merge_rate_d(g1, g2 + bump, p).unwrap() > d);
            prop_assert!(d > (p - 1.0) / p);
        }

        #[test]
        fn normalization_round_trip(x in -1e3f64..1e3, t in -1e3f64..1e3, n in 3u32..20) {
            let map = NormalizationMap::for_dimension(n).unwrap();
            let (a, b) = map.normalize(x, t);
            let (x2, t2) = map.denormalize(a, b);
            prop_assert!((x2 - x).abs() <= 1e-14 * x.abs().max(1.0));
            prop_assert!((t2 - t).abs() <= 1e-14 * t.abs().max(1.0));
        }
    }
}
