//! Traveling-wave profiles `v'' = -lambda p v^{p-1} v' - v^p + v`, normalized
//! by `v(0) = 1/2`, together with the closed-form steady states and the
//! Barenblatt family used as exact oracles.
//!
//! The profile is shot forward from the left asymptotic regime `v ~ e^x`.
//! Once `v` passes 1/2 the integration switches to `q = 1 - v`, so that the
//! right tail keeps full relative precision down to the plateau, after which
//! the tail `q = C e^{-gamma x}` is attached analytically.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::CsvTable;
use crate::model::{exponent_p, gamma_of_lambda, tail_exponent, DecayData};
use crate::numerics::{hermite5, log_linear_fit, pow_one_minus};
use crate::ode::{Dopri5, State, StepControl};

/// `v0(x) = (k_n c e^{g x} / (1 + c^2 e^{2 g x}))^{(n-2)/2}` with
/// `g = 2/(n-2)` and `k_n = (4n/(n-2))^{1/2}`.
pub fn steady_state(c: f64, n: u32, x: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
    }
    exponent_p(n)?;
    let nf = f64::from(n);
    let g = 2.0 / (nf - 2.0);
    let k = (4.0 * nf / (nf - 2.0)).sqrt();
    // k c e^{gx}/(1 + c^2 e^{2gx}) = (k/2) sech(g x + ln c)
    let s = g * x + c.ln();
    let sech = 1.0 / s.cosh();
    Ok((0.5 * k * sech).powf(0.5 * (nf - 2.0)))
}

/// Maximum of the steady state over `x`, `(n/(n-2))^{(n-2)/4}`.
pub fn steady_state_peak(n: u32) -> Result<f64> {
    exponent_p(n)?;
    let nf = f64::from(n);
    Ok((nf / (nf - 2.0)).powf((nf - 2.0) / 4.0))
}

/// Discrete residual `D^2 v + v^p - v` of the sampled steady state at
/// interior nodes.
pub fn steady_state_residual(c: f64, n: u32, grid: &Grid) -> Result<Vec<f64>> {
    let p = exponent_p(n)?;
    let v = (0..grid.len)
        .map(|i| steady_state(c, n, grid.x(i)))
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / (grid.dx * grid.dx);
    Ok((1..grid.len - 1)
        .map(|i| (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv + v[i].powf(p) - v[i])
        .collect())
}

/// `v1(x) = (1 + c e^{-(p-1)x})^{-1/(p-1)}`.
pub fn barenblatt(c: f64, p: f64, x: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
    }
    let a = c * (-(p - 1.0) * x).exp();
    Ok((-a.ln_1p() / (p - 1.0)).exp())
}

/// `1 - v1(x)` without cancellation.
pub fn barenblatt_one_minus(c: f64, p: f64, x: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
    }
    let a = c * (-(p - 1.0) * x).exp();
    Ok(-(-a.ln_1p() / (p - 1.0)).exp_m1())
}

/// The constant with `v1(0) = 1/2`, namely `2^{p-1} - 1`.
pub fn barenblatt_normalizing_c(p: f64) -> f64 {
    2f64.powf(p - 1.0) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    pub eps_seed: f64,
    pub rtol: f64,
    pub h_max: f64,
    /// plateau declared once both `1 - v` and `|v'|` fall below this
    pub plateau_tol: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            eps_seed: 1e-6,
            rtol: 1e-10,
            h_max: 0.05,
            plateau_tol: 1e-10,
        }
    }
}

/// Value of the profile with the complement kept separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavePoint {
    pub v: f64,
    /// `1 - v`, accurate to full relative precision near the plateau
    pub q: f64,
    pub v_x: f64,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    /// value and the first three derivatives of the tracked variable
    d: [f64; 4],
}

/// Continuous representation of a shot profile: left exponential tail,
/// quintic Hermite segments in `v` then in `q = 1 - v`, right exponential tail.
#[derive(Debug, Clone)]
struct Wave {
    gamma: f64,
    rising: Vec<Node>,
    plateau: Vec<Node>,
    tail_amplitude: f64,
}

fn segment(nodes: &[Node], x: f64) -> (usize, f64) {
    let k = nodes
        .partition_point(|n| n.x <= x)
        .clamp(1, nodes.len() - 1);
    let h = nodes[k].x - nodes[k - 1].x;
    (k, h)
}

fn interpolate(nodes: &[Node], x: f64) -> (f64, f64) {
    let (k, h) = segment(nodes, x);
    let a = &nodes[k - 1].d;
    let b = &nodes[k].d;
    let t = (x - nodes[k - 1].x) / h;
    let (value, _) = hermite5(t, h, [a[0], a[1], a[2]], [b[0], b[1], b[2]]);
    let (slope, _) = hermite5(t, h, [a[1], a[2], a[3]], [b[1], b[2], b[3]]);
    (value, slope)
}

impl Wave {
    fn eval(&self, x: f64) -> WavePoint {
        let first = &self.rising[0];
        if x <= first.x {
            let v = first.d[0] * (x - first.x).exp();
            return WavePoint {
                v,
                q: 1.0 - v,
                v_x: v,
            };
        }
        let switch = self.rising[self.rising.len() - 1].x;
        if x <= switch {
            let (v, v_x) = interpolate(&self.rising, x);
            return WavePoint { v, q: 1.0 - v, v_x };
        }
        let last = &self.plateau[self.plateau.len() - 1];
        if x <= last.x {
            let (q, q_x) = interpolate(&self.plateau, x);
            return WavePoint {
                v: 1.0 - q,
                q,
                v_x: -q_x,
            };
        }
        let q = self.tail_amplitude * (-self.gamma * x).exp();
        WavePoint {
            v: 1.0 - q,
            q,
            v_x: self.gamma * q,
        }
    }

    fn plateau_start(&self) -> f64 {
        self.plateau[self.plateau.len() - 1].x
    }
}

/// Sampled traveling wave with its continuous representation attached.
#[derive(Debug, Clone)]
pub struct SolitonProfile {
    pub lambda: f64,
    pub p: f64,
    pub grid: Grid,
    pub v: Vec<f64>,
    pub v_x: Vec<f64>,
    pub one_minus_v: Vec<f64>,
    /// analytic tail exponent, fitted amplitude; `d` is the self-pair rate
    pub decay: DecayData,
    wave: Arc<Wave>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `v(x - lambda tau + h)`, rising to the right
    Left,
    /// `v(-x - lambda tau + h)`, the reflected wave
    Right,
}

impl SolitonProfile {
    /// Profile and derivative at any `x`, with tail extrapolation outside the
    /// integrated range.
    pub fn eval(&self, x: f64) -> WavePoint {
        self.wave.eval(x)
    }

    /// Start of the analytic right tail.
    pub fn plateau_start(&self) -> f64 {
        self.wave.plateau_start()
    }

    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["x", "v", "v_x"]);
        for i in 0..self.grid.len {
            t.push_row(&[self.grid.x(i), self.v[i], self.v_x[i]]);
        }
        t
    }
}

/// Shoot with default options on the grid `[x_min, x_max]` with spacing `dx`.
pub fn shoot_profile(
    lambda: f64,
    p: f64,
    x_min: f64,
    x_max: f64,
    dx: f64,
    eps_seed: f64,
) -> Result<SolitonProfile> {
    let grid = Grid::new(x_min, x_max, dx)?;
    shoot_profile_with(
        lambda,
        p,
        grid,
        &ShootOptions {
            eps_seed,
            ..ShootOptions::default()
        },
    )
}

pub fn shoot_profile_with(
    lambda: f64,
    p: f64,
    grid: Grid,
    opts: &ShootOptions,
) -> Result<SolitonProfile> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must exceed 1")));
    }
    gamma_of_lambda(lambda, p)?;
    if !(lambda >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} < 1: only monotone profiles (lambda >= 1) are supported"
        )));
    }
    if !(opts.eps_seed > 0.0 && opts.eps_seed < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "seed {} must lie in (0, 1/2)",
            opts.eps_seed
        )));
    }
    let gamma = tail_exponent(lambda, p)?;
    let wave = integrate_wave(lambda, p, gamma, grid.x_max(), opts)?;

    let mut v = Vec::with_capacity(grid.len);
    let mut v_x = Vec::with_capacity(grid.len);
    let mut one_minus_v = Vec::with_capacity(grid.len);
    for i in 0..grid.len {
        let pt = wave.eval(grid.x(i));
        v.push(pt.v);
        v_x.push(pt.v_x);
        one_minus_v.push(pt.q);
    }
    if v[0] >= 1e-4 {
        return Err(Error::DomainTooSmall {
            value: v[0],
            limit: 1e-4,
        });
    }
    let q_end = one_minus_v[grid.len - 1];
    if q_end >= 1e-3 {
        return Err(Error::ProfileNotConverged(format!(
            "1 - v(x_max = {}) = {q_end:e} is not below 1e-3",
            grid.x_max()
        )));
    }
    let decay = DecayData::single(gamma, wave.tail_amplitude, p)?;
    Ok(SolitonProfile {
        lambda,
        p,
        grid,
        v,
        v_x,
        one_minus_v,
        decay,
        wave: Arc::new(wave),
    })
}

fn third_derivative_v(lambda: f64, p: f64, v: f64, v1: f64, v2: f64) -> f64 {
    let vp2 = v.powf(p - 2.0);
    let vp1 = vp2 * v;
    -lambda * p * ((p - 1.0) * vp2 * v1 * v1 + vp1 * v2) - p * vp1 * v1 + v1
}

fn integrate_wave(
    lambda: f64,
    p: f64,
    gamma: f64,
    x_max: f64,
    opts: &ShootOptions,
) -> Result<Wave> {
    let lp = lambda * p;
    let ctl = StepControl {
        rtol: opts.rtol,
        atol: 1e-300,
        h_max: opts.h_max,
        h_min: 1e-12,
    };

    // rising phase in (v, v'), seeded on the left asymptotic v = v' = eps
    let rhs_v = move |y: &State| {
        let v = y[0].max(0.0);
        let vp1 = v.powf(p - 1.0);
        [y[1], -lp * vp1 * y[1] - vp1 * v + v]
    };
    let node_v = |x: f64, y: State, dy: State| Node {
        x,
        d: [
            y[0],
            y[1],
            dy[1],
            third_derivative_v(lambda, p, y[0], y[1], dy[1]),
        ],
    };
    let cap = 400.0 + x_max.max(0.0);
    let mut ode = Dopri5::new(rhs_v, 0.0, [opts.eps_seed, opts.eps_seed], ctl);
    let mut rising = vec![node_v(ode.x, ode.y, ode.dy)];
    while ode.y[0] < 0.5 {
        ode.step()?;
        rising.push(node_v(ode.x, ode.y, ode.dy));
        if ode.y[1] < 0.0 {
            return Err(Error::ProfileCollapse {
                x: ode.x,
                v: ode.y[0],
                v_x: ode.y[1],
            });
        }
        if ode.x > cap {
            return Err(Error::ProfileNotConverged(format!(
                "v stayed below 1/2 up to x = {}",
                ode.x
            )));
        }
    }
    let x_half = locate_half(&rising);

    // plateau phase in (q, q') with q = 1 - v
    let rhs_q = move |y: &State| {
        let q = y[0];
        let w = 1.0 - q;
        let wp1 = pow_one_minus(q, p - 1.0);
        let excess = ((p - 1.0) * (-q).ln_1p()).exp_m1();
        [y[1], -lp * wp1 * y[1] + w * excess]
    };
    let node_q = |x: f64, y: State, dy: State| {
        let (q, q1, q2) = (y[0], y[1], dy[1]);
        let w = 1.0 - q;
        let wp2 = pow_one_minus(q, p - 2.0);
        let wp1 = wp2 * w;
        let excess = ((p - 1.0) * (-q).ln_1p()).exp_m1();
        let q3 = -lp * (-(p - 1.0) * wp2 * q1 * q1 + wp1 * q2) - q1 * excess - (p - 1.0) * wp1 * q1;
        Node {
            x,
            d: [q, q1, q2, q3],
        }
    };
    let start = [1.0 - ode.y[0], -ode.y[1]];
    let mut ode = Dopri5::new(rhs_q, ode.x, start, ctl);
    let mut plateau = vec![node_q(ode.x, ode.y, ode.dy)];
    loop {
        ode.step()?;
        plateau.push(node_q(ode.x, ode.y, ode.dy));
        let (q, q1) = (ode.y[0], ode.y[1]);
        if q < -1e-8 {
            return Err(Error::ProfileBlowUp {
                x: ode.x - x_half,
                v: 1.0 - q,
            });
        }
        if q.abs() < opts.plateau_tol && q1.abs() < opts.plateau_tol {
            break;
        }
        if ode.x - x_half > cap {
            return Err(Error::ProfileNotConverged(format!(
                "1 - v = {q:e} at x = {}",
                ode.x - x_half
            )));
        }
    }
    if !(plateau[plateau.len() - 1].d[0] > 0.0) {
        return Err(Error::ProfileBlowUp {
            x: ode.x - x_half,
            v: 1.0 - ode.y[0],
        });
    }

    for node in rising.iter_mut().chain(plateau.iter_mut()) {
        node.x -= x_half;
    }
    let tail_amplitude = fit_tail_amplitude(&plateau, gamma)?;
    // pin the attached tail to the last node so the representation is continuous
    let last = plateau[plateau.len() - 1];
    let pinned = last.d[0] * (gamma * last.x).exp();
    Ok(Wave {
        gamma,
        rising,
        plateau,
        tail_amplitude: if (pinned / tail_amplitude - 1.0).abs() < 1e-3 {
            pinned
        } else {
            tail_amplitude
        },
    })
}

/// Root of `v = 1/2` on the last rising segment, by bisection on the
/// Hermite interpolant.
fn locate_half(nodes: &[Node]) -> f64 {
    let n = nodes.len();
    if n < 2 {
        return nodes[0].x;
    }
    let (a, b) = (&nodes[n - 2], &nodes[n - 1]);
    let h = b.x - a.x;
    let f = |t: f64| hermite5(t, h, [a.d[0], a.d[1], a.d[2]], [b.d[0], b.d[1], b.d[2]]).0 - 0.5;
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(lo) > 0.0 {
        return a.x;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-17 {
            break;
        }
    }
    a.x + 0.5 * (lo + hi) * h
}

/// Amplitude `C` of `q = C e^{-gamma x}` by a fixed-slope log fit over the
/// deepest decade of the integrated plateau.
fn fit_tail_amplitude(plateau: &[Node], gamma: f64) -> Result<f64> {
    let q_end = plateau[plateau.len() - 1].d[0];
    let logs: Vec<f64> = plateau
        .iter()
        .filter(|n| n.d[0] > 0.0 && n.d[0] <= 10.0 * q_end)
        .map(|n| n.d[0].ln() + gamma * n.x)
        .collect();
    if logs.is_empty() {
        return Err(Error::FitWindowTooSmall {
            found: 0,
            needed: 1,
        });
    }
    Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub window: [f64; 2],
    pub gamma_fit: f64,
    pub c_fit: f64,
    /// largest regression residual in log scale
    pub residual: f64,
}

/// Regression of `ln(1 - v)` on `x` over the deepest `window_fraction` of the
/// samples with `1 - v` in `(1e-8, 1e-2)`.
pub fn fit_tail(profile: &SolitonProfile, window_fraction: f64) -> Result<TailFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fraction {window_fraction} must lie in (0, 1]"
        )));
    }
    let region: Vec<usize> = (0..profile.grid.len)
        .filter(|&i| {
            let q = profile.one_minus_v[i];
            q > 1e-8 && q < 1e-2 && profile.grid.x(i) > 0.0
        })
        .collect();
    let take = (window_fraction * region.len() as f64).ceil() as usize;
    let window = &region[region.len() - take.min(region.len())..];
    if window.len() < 10 {
        return Err(Error::FitWindowTooSmall {
            found: window.len(),
            needed: 10,
        });
    }
    let x: Vec<f64> = window.iter().map(|&i| profile.grid.x(i)).collect();
    let q: Vec<f64> = window.iter().map(|&i| profile.one_minus_v[i]).collect();
    let line = log_linear_fit(&x, &q)?;
    Ok(TailFit {
        window: [x[0], x[x.len() - 1]],
        gamma_fit: -line.slope,
        c_fit: line.intercept.exp(),
        residual: line.max_residual,
    })
}

/// Largest relative deviation of `v_x` from `C gamma e^{-gamma x}` over the fit
/// window, using the profile's own tail data.
pub fn check_derivative_tail(profile: &SolitonProfile, fit: &TailFit) -> Result<f64> {
    if !(fit.residual < 1e-3) {
        return Err(Error::InvalidParameter(format!(
            "tail fit residual {:e} is not below 1e-3",
            fit.residual
        )));
    }
    let DecayData { gamma, c_tail, .. } = profile.decay;
    let mut worst = 0.0f64;
    for i in 0..profile.grid.len {
        let x = profile.grid.x(i);
        if x < fit.window[0] || x > fit.window[1] {
            continue;
        }
        let model = c_tail * gamma * (-gamma * x).exp();
        worst = worst.max(((profile.v_x[i] - model) / model).abs());
    }
    Ok(worst)
}

/// `v(x - lambda tau + h)` for the left orientation, `v(-x - lambda tau + h)`
/// for the right one. The returned slope is `d/dx` of the oriented wave.
pub fn traveling_wave_point(
    profile: &SolitonProfile,
    x: f64,
    tau: f64,
    h: f64,
    orientation: Orientation,
) -> WavePoint {
    match orientation {
        Orientation::Left => profile.eval(x - profile.lambda * tau + h),
        Orientation::Right => {
            let pt = profile.eval(-x - profile.lambda * tau + h);
            WavePoint { v_x: -pt.v_x, ..pt }
        }
    }
}

pub fn traveling_wave_eval(
    profile: &SolitonProfile,
    x: f64,
    tau: f64,
    h: f64,
    orientation: Orientation,
) -> f64 {
    traveling_wave_point(profile, x, tau, h, orientation).v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_state_examples() {
        assert!((steady_state(1.0, 3, 0.0).unwrap() - 3f64.powf(0.25)).abs() < 1e-14);
        assert!((steady_state_peak(4).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        // the peak sits where c e^{gx} = 1
        let c: f64 = 0.3;
        let x_peak = -c.ln();
        assert!((steady_state(c, 4, x_peak).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        assert!(steady_state(0.0, 3, 0.0).is_err());
    }

    #[test]
    fn steady_state_translation() {
        let (n, c) = (5u32, 2.5);
        let g = 2.0 / 3.0;
        for x in [-3.0, -0.5, 0.0, 1.7] {
            let a = steady_state(c, n, x).unwrap();
            let b = steady_state(1.0, n, x + c.ln() / g).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn barenblatt_examples() {
        let c = barenblatt_normalizing_c(5.0);
        assert_eq!(c, 15.0);
        assert!((barenblatt(c, 5.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((barenblatt(c, 5.0, 40.0).unwrap() - 1.0).abs() < 1e-15);
        let x = -30.0;
        let ratio = barenblatt(c, 5.0, x).unwrap() / (c.powf(-0.25) * x.exp());
        assert!((ratio - 1.0).abs() < 1e-12);
        assert!(barenblatt(-1.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn barenblatt_complement_matches_direct() {
        for x in [-2.0, 0.0, 1.0, 3.0] {
            let direct = 1.0 - barenblatt(15.0, 5.0, x).unwrap();
            let stable = barenblatt_one_minus(15.0, 5.0, x).unwrap();
            assert!((direct - stable).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_wave_is_continuous_across_phases() {
        let prof = shoot_profile(1.5, 5.0, -20.0, 60.0, 0.05, 1e-6).unwrap();
        let wave = &prof.wave;
        let switch = wave.rising[wave.rising.len() - 1].x;
        let a = prof.eval(switch - 1e-12);
        let b = prof.eval(switch + 1e-12);
        assert!((a.v - b.v).abs() < 1e-10);
        let tail = prof.plateau_start();
        let a = prof.eval(tail - 1e-12);
        let b = prof.eval(tail + 1e-12);
        assert!((a.q / b.q - 1.0).abs() < 1e-6);
    }

    #[test]
    fn half_normalization() {
        for lambda in [1.0, 1.2, 2.0] {
            let prof = shoot_profile(lambda, 5.0, -20.0, 80.0, 0.1, 1e-6).unwrap();
            assert!((prof.eval(0.0).v - 0.5).abs() < 1e-10, "lambda {lambda}");
        }
    }

    #[test]
    fn rejects_oscillatory_and_subunit_speeds() {
        let e = shoot_profile(0.5, 5.0, -20.0, 20.0, 0.1, 1e-6).unwrap_err();
        assert!(matches!(e, Error::OscillatoryRegime { .. }));
        let e = shoot_profile(0.9, 5.0, -20.0, 20.0, 0.1, 1e-6).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter(_)));
    }

    #[test]
    fn short_domains_are_rejected() {
        assert!(matches!(
            shoot_profile(1.2, 5.0, -5.0, 40.0, 0.1, 1e-6),
            Err(Error::DomainTooSmall { .. })
        ));
        assert!(matches!(
            shoot_profile(2.0, 5.0, -20.0, 5.0, 0.1, 1e-6),
            Err(Error::ProfileNotConverged(_))
        ));
    }
}
