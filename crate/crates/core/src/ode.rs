//! Adaptive Dormand–Prince 5(4) integration of a two-component first-order
//! system. Error control is per component against `atol + rtol |y|`.

use crate::error::{Error, Result};

pub type State = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_min: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-300,
            h_max: 0.05,
            h_min: 1e-12,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order weights minus the embedded fourth-order ones
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy(y: State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// Single-trajectory stepper. The right-hand side is evaluated at `y` only
/// (autonomous systems).
pub struct Dopri5<F: Fn(&State) -> State> {
    f: F,
    ctl: StepControl,
    pub x: f64,
    pub y: State,
    /// `f(y)` at the current point (first-same-as-last)
    pub dy: State,
    h: f64,
}

impl<F: Fn(&State) -> State> Dopri5<F> {
    pub fn new(f: F, x0: f64, y0: State, ctl: StepControl) -> Self {
        let dy = f(&y0);
        let h = (ctl.h_max * 0.1).max(ctl.h_min);
        Self {
            f,
            ctl,
            x: x0,
            y: y0,
            dy,
            h,
        }
    }

    /// Advance by one accepted step.
    pub fn step(&mut self) -> Result<()> {
        let f = &self.f;
        let y = self.y;
        let k1 = self.dy;
        loop {
            let h = self.h.min(self.ctl.h_max);
            let k2 = f(&axpy(y, &[(A21, &k1)], h));
            let k3 = f(&axpy(y, &[(A31, &k1), (A32, &k2)], h));
            let k4 = f(&axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
            let k5 = f(&axpy(
                y,
                &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
                h,
            ));
            let k6 = f(&axpy(
                y,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                h,
            ));
            let y_new = axpy(
                y,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
                h,
            );
            let k7 = f(&y_new);

            let mut err = 0.0f64;
            for c in 0..2 {
                let e = h
                    * (E1 * k1[c] + E3 * k3[c] + E4 * k4[c] + E5 * k5[c] + E6 * k6[c] + E7 * k7[c]);
                let scale = self.ctl.atol + self.ctl.rtol * y[c].abs().max(y_new[c].abs());
                err = err.max((e / scale).abs());
            }
            if !err.is_finite() || !y_new[0].is_finite() || !y_new[1].is_finite() {
                if h <= self.ctl.h_min {
                    return Err(Error::NonFinite(format!("ode state near x = {}", self.x)));
                }
                self.h = (h * 0.1).max(self.ctl.h_min);
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 || h <= self.ctl.h_min {
                self.x += h;
                self.y = y_new;
                self.dy = k7;
                self.h = (h * factor).clamp(self.ctl.h_min, self.ctl.h_max);
                return Ok(());
            }
            self.h = (h * factor.min(1.0)).max(self.ctl.h_min);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_phase() {
        let mut s = Dopri5::new(
            |y: &State| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            StepControl {
                atol: 1e-14,
                ..StepControl::default()
            },
        );
        while s.x < 20.0 {
            s.step().unwrap();
        }
        assert!((s.y[0] - s.x.cos()).abs() < 1e-8);
        assert!((s.y[1] + s.x.sin()).abs() < 1e-8);
    }

    #[test]
    fn exponential_growth_relative_accuracy() {
        let mut s = Dopri5::new(
            |y: &State| [y[0], -2.0 * y[1]],
            0.0,
            [1e-6, 1.0],
            StepControl::default(),
        );
        while s.x < 20.0 {
            s.step().unwrap();
        }
        let exact = 1e-6 * s.x.exp();
        assert!(((s.y[0] - exact) / exact).abs() < 1e-8);
        let exact2 = (-2.0 * s.x).exp();
        assert!(((s.y[1] - exact2) / exact2).abs() < 1e-8);
    }
}
