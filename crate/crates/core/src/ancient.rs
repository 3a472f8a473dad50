//! The merged-soliton supersolution `v = min(v_lambda(x - lambda tau + h),
//! v_lambda'(-x - lambda' tau + h'))`, the solutions `u_m` started from it at
//! `tau = -m`, and the exponential laws both obey.
//!
//! Every law here lives at the scale `e^{d tau}`, far below the rounding
//! level of `u` itself. The default solver therefore evolves the defect
//! `w = v - u` against the analytic `v` instead of `u`, and all diagnostics
//! are assembled from `w` and from `q = 1 - v`, which the profiles carry at
//! full relative precision.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::CsvTable;
use crate::model::{DecayData, ModelParams};
use crate::numerics::{
    compensated_sum, linear_fit, log_linear_fit, one_minus_pow_one_minus, pow_one_minus,
    thomas_solve, trapezoid, LinearFit, Power,
};
use crate::pde::{apply_boundary, evolve, BoundaryPair, FlowState, SolverConfig};
use crate::soliton::{
    shoot_profile_with, traveling_wave_point, Orientation, ShootOptions, SolitonProfile, WavePoint,
};

/// Two opposed waves and the shifts placing them.
#[derive(Debug, Clone)]
pub struct SupersolutionSpec {
    pub params: ModelParams,
    pub left_profile: SolitonProfile,
    pub right_profile: SolitonProfile,
    /// tail data of each wave, with `d` the merge rate of the pair
    pub decay_left: DecayData,
    pub decay_right: DecayData,
}

/// Supersolution value at one point, with its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperPoint {
    pub v: f64,
    pub q: f64,
    /// slope of the active branch
    pub v_x: f64,
    pub branch: Orientation,
}

/// Grid for a single profile wide enough for both tails at the given speed.
fn profile_grid(gamma: f64) -> Result<Grid> {
    Grid::new(-40.0, (30.0 / gamma).max(20.0), 0.05)
}

impl SupersolutionSpec {
    pub fn build(params: ModelParams, opts: &ShootOptions) -> Result<Self> {
        let (g1, g2, _) = params.decay()?;
        let left = shoot_profile_with(params.lambda, params.p, profile_grid(g1)?, opts)?;
        let right = if params.lambda_prime == params.lambda {
            left.clone()
        } else {
            shoot_profile_with(params.lambda_prime, params.p, profile_grid(g2)?, opts)?
        };
        Self::from_profiles(params, left, right)
    }

    pub fn from_profiles(
        params: ModelParams,
        left_profile: SolitonProfile,
        right_profile: SolitonProfile,
    ) -> Result<Self> {
        if left_profile.lambda != params.lambda || right_profile.lambda != params.lambda_prime {
            return Err(Error::InvalidParameter(
                "profile speeds do not match the model parameters".into(),
            ));
        }
        let decay_left = left_profile
            .decay
            .paired_with(right_profile.decay.gamma, params.p)?;
        let decay_right = right_profile
            .decay
            .paired_with(left_profile.decay.gamma, params.p)?;
        Ok(Self {
            params,
            left_profile,
            right_profile,
            decay_left,
            decay_right,
        })
    }

    /// Same waves, new shifts.
    pub fn with_shifts(&self, h: f64, h_prime: f64) -> Result<Self> {
        let params = ModelParams::new(
            self.params.n,
            self.params.lambda,
            self.params.lambda_prime,
            h,
            h_prime,
        )?;
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    /// Merge rate `d` of the pair.
    pub fn merge_rate(&self) -> f64 {
        self.decay_left.d
    }

    pub fn left_point(&self, x: f64, tau: f64) -> WavePoint {
        traveling_wave_point(&self.left_profile, x, tau, self.params.h, Orientation::Left)
    }

    pub fn right_point(&self, x: f64, tau: f64) -> WavePoint {
        traveling_wave_point(
            &self.right_profile,
            x,
            tau,
            self.params.h_prime,
            Orientation::Right,
        )
    }

    pub fn point(&self, x: f64, tau: f64) -> SuperPoint {
        let a = self.left_point(x, tau);
        let b = self.right_point(x, tau);
        // the smaller value is the larger complement, compared where it is exact
        let left_wins = if a.v < 0.5 || b.v < 0.5 {
            a.v <= b.v
        } else {
            a.q >= b.q
        };
        let (pt, branch) = if left_wins {
            (a, Orientation::Left)
        } else {
            (b, Orientation::Right)
        };
        SuperPoint {
            v: pt.v,
            q: pt.q,
            v_x: pt.v_x,
            branch,
        }
    }

    /// Half-value positions of the left and right waves at time `tau`.
    fn front_positions(&self, tau: f64) -> (f64, f64) {
        let p = &self.params;
        (p.lambda * tau - p.h, -(p.lambda_prime * tau - p.h_prime))
    }
}

pub fn supersolution_eval(spec: &SupersolutionSpec, x: f64, tau: f64) -> f64 {
    spec.point(x, tau).v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionRecord {
    pub tau: f64,
    pub x_numeric: f64,
    /// leading-order position from the tail data
    pub x_asymptotic: f64,
    pub value_at_intersection: f64,
    /// `1 - value`, at full relative precision
    pub one_minus_value: f64,
    /// `|left - right|` at the computed root
    pub root_residual: f64,
}

/// Leading-order crossing `((g - g')/p) tau + (ln(C/C') + h' g' - h g)/(g + g')`.
pub fn intersection_asymptotic(spec: &SupersolutionSpec, tau: f64) -> f64 {
    let (g1, g2) = (spec.decay_left.gamma, spec.decay_right.gamma);
    let (c1, c2) = (spec.decay_left.c_tail, spec.decay_right.c_tail);
    let p = spec.params.p;
    ((g1 - g2) / p) * tau
        + ((c1 / c2).ln() + spec.params.h_prime * g2 - spec.params.h * g1) / (g1 + g2)
}

/// Bisection on the increasing difference `left - right`.
pub fn intersection_numeric(spec: &SupersolutionSpec, tau: f64) -> Result<IntersectionRecord> {
    let diff = |x: f64| {
        let a = spec.left_point(x, tau);
        let b = spec.right_point(x, tau);
        if a.v < 0.5 || b.v < 0.5 {
            a.v - b.v
        } else {
            b.q - a.q
        }
    };
    let (fl, fr) = spec.front_positions(tau);
    let width = 60.0 + spec.params.h.abs() + spec.params.h_prime.abs();
    let (mut lo, mut hi) = (fl.min(fr) - width, fl.max(fr) + width);
    let (dlo, dhi) = (diff(lo), diff(hi));
    if !(dlo < 0.0 && dhi > 0.0) {
        return Err(Error::NoIntersection { lo, hi });
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let dm = diff(mid);
        if dm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if dm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let a = spec.left_point(x, tau);
    let b = spec.right_point(x, tau);
    let q = 0.5 * (a.q + b.q);
    Ok(IntersectionRecord {
        tau,
        x_numeric: x,
        x_asymptotic: intersection_asymptotic(spec, tau),
        value_at_intersection: 1.0 - q,
        one_minus_value: q,
        root_residual: (a.v - b.v).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionLaw {
    /// fitted `dx/dtau` of the crossing
    pub slope_x: f64,
    /// `(g - g')/p`
    pub slope_x_expected: f64,
    /// fitted slope of `ln(1 - value)`
    pub slope_log_gap: f64,
    pub d: f64,
    pub records: Vec<IntersectionRecord>,
}

fn uniform_taus(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let k = ((hi - lo) / step).round() as usize;
    (0..=k).map(|i| lo + i as f64 * step).collect()
}

/// Slopes of the crossing position and of `ln(1 - value)` over `[tau_lo, tau_hi]`.
pub fn intersection_law(
    spec: &SupersolutionSpec,
    tau_lo: f64,
    tau_hi: f64,
    step: f64,
) -> Result<IntersectionLaw> {
    let records = uniform_taus(tau_lo, tau_hi, step)
        .into_iter()
        .map(|t| intersection_numeric(spec, t))
        .collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    let xs: Vec<f64> = records.iter().map(|r| r.x_numeric).collect();
    let gaps: Vec<f64> = records.iter().map(|r| r.one_minus_value).collect();
    let (g1, g2) = (spec.decay_left.gamma, spec.decay_right.gamma);
    Ok(IntersectionLaw {
        slope_x: linear_fit(&taus, &xs)?.slope,
        slope_x_expected: (g1 - g2) / spec.params.p,
        slope_log_gap: log_linear_fit(&taus, &gaps)?.slope,
        d: spec.merge_rate(),
        records,
    })
}

/// `C` in `1 - value ~ C e^{d tau}`, by a fixed-slope log fit over
/// `[-m, -m/2]`.
pub fn fit_merge_constant(spec: &SupersolutionSpec, m: f64) -> Result<f64> {
    let d = spec.merge_rate();
    let logs = uniform_taus(-m, -0.5 * m, 0.25)
        .into_iter()
        .map(|t| {
            let r = intersection_numeric(spec, t)?;
            if !(r.one_minus_value > 0.0) {
                return Err(Error::NonPositiveInFit {
                    at: t,
                    value: r.one_minus_value,
                });
            }
            Ok(r.one_minus_value.ln() - d * t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((compensated_sum(logs.iter().copied()) / logs.len() as f64).exp())
}

/// Grid spacing and tail margin for quadratures of the supersolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub dx: f64,
    /// distance kept beyond each front, long enough for `v < 1e-16`
    pub margin: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            dx: 0.01,
            margin: 40.0,
        }
    }
}

impl Quadrature {
    fn grid_for(&self, spec: &SupersolutionSpec, taus: &[f64]) -> Result<Grid> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &t in taus {
            let (a, b) = spec.front_positions(t);
            lo = lo.min(a.min(b));
            hi = hi.max(a.max(b));
        }
        let half = (lo.abs().max(hi.abs()) + self.margin) / self.dx;
        Grid::symmetric(half.ceil() * self.dx, self.dx)
    }
}

/// `v^p` with the complement form where `v` is near one.
#[inline]
fn vp_of(pt_v: f64, pt_q: f64, p: f64, pw: Power) -> f64 {
    if pt_v < 0.5 {
        pw.of(pt_v)
    } else {
        pow_one_minus(pt_q, p)
    }
}

/// `v^p - v`, accurate near both ends.
#[inline]
fn reaction(v: f64, q: f64, p: f64, pw: Power) -> f64 {
    if v < 0.5 {
        pw.of(v) - v
    } else {
        -(1.0 - q) * one_minus_pow_one_minus(q, p - 1.0)
    }
}

/// `v_a^p - v_b^p` without forming either power near one.
#[inline]
fn vp_difference(a: (f64, f64), b: (f64, f64), p: f64, pw: Power) -> f64 {
    if a.0 < 0.5 || b.0 < 0.5 {
        vp_of(a.0, a.1, p, pw) - vp_of(b.0, b.1, p, pw)
    } else {
        one_minus_pow_one_minus(b.1, p) - one_minus_pow_one_minus(a.1, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassResidual {
    pub tau: f64,
    /// centered difference of `int v^p`
    pub lhs: f64,
    /// `int v^p - int v + (g + g') C e^{d tau}`
    pub rhs: f64,
    /// the kink term `(g + g') C e^{d tau}`
    pub correction: f64,
    pub residual: f64,
}

/// Residual of the integral identity satisfied by the supersolution. The two
/// sides are differenced pointwise before integrating, so the result is not
/// swamped by the rounding of `int v^p` itself.
pub fn supersolution_mass_residual(
    spec: &SupersolutionSpec,
    tau: f64,
    dtau_probe: f64,
    merge_constant: f64,
    quad: &Quadrature,
) -> Result<MassResidual> {
    if !(dtau_probe > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "probe step {dtau_probe} must be positive"
        )));
    }
    let p = spec.params.p;
    let pw = Power::new(p);
    let grid = quad.grid_for(spec, &[tau - dtau_probe, tau + dtau_probe])?;
    let mut time_part = Vec::with_capacity(grid.len);
    let mut reaction_part = Vec::with_capacity(grid.len);
    let mut diff = Vec::with_capacity(grid.len);
    for i in 0..grid.len {
        let x = grid.x(i);
        let plus = spec.point(x, tau + dtau_probe);
        let minus = spec.point(x, tau - dtau_probe);
        let now = spec.point(x, tau);
        let dt = vp_difference((plus.v, plus.q), (minus.v, minus.q), p, pw) / (2.0 * dtau_probe);
        let r = reaction(now.v, now.q, p, pw);
        time_part.push(dt);
        reaction_part.push(r);
        diff.push(dt - r);
    }
    let (g1, g2) = (spec.decay_left.gamma, spec.decay_right.gamma);
    let correction = (g1 + g2) * merge_constant * (spec.merge_rate() * tau).exp();
    let lhs = trapezoid(&time_part, grid.dx);
    let rhs = trapezoid(&reaction_part, grid.dx) + correction;
    Ok(MassResidual {
        tau,
        lhs,
        rhs,
        correction,
        residual: trapezoid(&diff, grid.dx) - correction,
    })
}

/// `|int v1^p - int v2^p|` for two supersolutions with equal speeds.
pub fn distinguish_functional(
    spec1: &SupersolutionSpec,
    spec2: &SupersolutionSpec,
    tau: f64,
    quad: &Quadrature,
) -> Result<f64> {
    if spec1.params.lambda != spec2.params.lambda
        || spec1.params.lambda_prime != spec2.params.lambda_prime
        || spec1.params.p != spec2.params.p
    {
        return Err(Error::MismatchedSpeeds);
    }
    let p = spec1.params.p;
    let pw = Power::new(p);
    let g1 = quad.grid_for(spec1, &[tau])?;
    let g2 = quad.grid_for(spec2, &[tau])?;
    let grid = if g1.len >= g2.len { g1 } else { g2 };
    let integrand: Vec<f64> = (0..grid.len)
        .map(|i| {
            let x = grid.x(i);
            let a = spec1.point(x, tau);
            let b = spec2.point(x, tau);
            vp_difference((a.v, a.q), (b.v, b.q), p, pw)
        })
        .collect();
    Ok(trapezoid(&integrand, grid.dx).abs())
}

/// Samples of the supersolution at `tau = -m`.
pub fn build_initial_data(spec: &SupersolutionSpec, m: f64, grid: Grid) -> Result<FlowState> {
    let state = FlowState::from_fn(-m, grid, |x| spec.point(x, -m).v)?;
    let edge = state.u[0].max(state.u[grid.len - 1]);
    if edge >= 1e-8 {
        return Err(Error::DomainTooSmall {
            value: edge,
            limit: 1e-8,
        });
    }
    Ok(state)
}

/// Symmetric grid with half-width `max(30, 2 m max(lambda, lambda'))`, widened
/// in steps of 5 until the initial data at `-m` is below `1e-8` at both ends.
pub fn construction_grid(spec: &SupersolutionSpec, m: f64, dx: f64) -> Result<Grid> {
    let lmax = spec.params.lambda.max(spec.params.lambda_prime);
    let mut half = (30.0f64).max(2.0 * m * lmax);
    for _ in 0..200 {
        let cells = (half / dx).ceil();
        let grid = Grid::symmetric(cells * dx, dx)?;
        let edge = spec
            .point(grid.x(0), -m)
            .v
            .max(spec.point(grid.x_max(), -m).v);
        if edge < 1e-8 {
            return Ok(grid);
        }
        half += 5.0;
    }
    Err(Error::DomainTooSmall {
        value: f64::NAN,
        limit: 1e-8,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// evolve `u` itself with the generic solver
    Direct,
    /// evolve `w = v - u` against the analytic supersolution
    #[default]
    Defect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// steps between stored snapshots
    pub snapshot_every: usize,
    pub formulation: Formulation,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            snapshot_every: 100,
            formulation: Formulation::Defect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub tau: f64,
    /// `int (v^p - u^p)`
    pub q_m: f64,
    pub max_u: f64,
    /// `1 - max u`, at full relative precision
    pub one_minus_max: f64,
    /// leftmost maximizer
    pub argmax_x: f64,
    pub mass_p: f64,
    pub mass_1: f64,
    /// `max (u - v)`
    pub barrier_violation: f64,
    pub x_intersection_numeric: f64,
    pub x_intersection_asymptotic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tau: f64,
    pub u: Vec<f64>,
    /// `v - u`
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncientRun {
    pub m: f64,
    pub formulation: Formulation,
    pub grid: Grid,
    pub dtau: f64,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<SnapshotDiagnostics>,
    /// largest increase of `u` between consecutive snapshots
    pub monotonicity_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extinction_time: Option<f64>,
    pub steps: usize,
}

impl AncientRun {
    pub fn snapshot_near(&self, tau: f64) -> Option<(usize, &Snapshot)> {
        self.snapshots
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.tau - tau).abs().total_cmp(&(b.1.tau - tau).abs()))
            .filter(|(_, s)| (s.tau - tau).abs() < 1e-6)
    }

    pub fn series(&self, f: impl Fn(&SnapshotDiagnostics) -> f64) -> Vec<(f64, f64)> {
        self.diagnostics.iter().map(|d| (d.tau, f(d))).collect()
    }

    pub fn state_at(&self, k: usize) -> FlowState {
        FlowState {
            tau: self.snapshots[k].tau,
            grid: self.grid,
            u: self.snapshots[k].u.clone(),
        }
    }

    /// Time series `(tau, Q, max_u, argmax, mass_p, mass_1, x_num, x_asym)`.
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "tau",
            "q_m",
            "max_u",
            "one_minus_max",
            "argmax",
            "mass_p",
            "mass_1",
            "barrier_violation",
            "x_intersection_numeric",
            "x_intersection_asymptotic",
        ]);
        for d in &self.diagnostics {
            t.push_row(&[
                d.tau,
                d.q_m,
                d.max_u,
                d.one_minus_max,
                d.argmax_x,
                d.mass_p,
                d.mass_1,
                d.barrier_violation,
                d.x_intersection_numeric,
                d.x_intersection_asymptotic,
            ]);
        }
        t
    }

    /// Long-format snapshots `(tau, x, u, w)`.
    pub fn trajectory_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["tau", "x", "u", "w"]);
        for s in &self.snapshots {
            for i in 0..self.grid.len {
                t.push_row(&[s.tau, self.grid.x(i), s.u[i], s.w[i]]);
            }
        }
        t
    }
}

/// Supersolution sampled on a grid at one time, with the kink source.
struct Sample {
    v: Vec<f64>,
    q: Vec<f64>,
    vp: Vec<f64>,
}

fn sample(spec: &SupersolutionSpec, grid: &Grid, tau: f64, pw: Power, s: &mut Sample) {
    let p = spec.params.p;
    s.v.clear();
    s.q.clear();
    s.vp.clear();
    for i in 0..grid.len {
        let pt = spec.point(grid.x(i), tau);
        s.v.push(pt.v);
        s.q.push(pt.q);
        s.vp.push(vp_of(pt.v, pt.q, p, pw));
    }
}

/// Hat-function discretization of `J delta(x - x*)` with `J` the slope jump
/// of `v` at the crossing.
fn kink_source(spec: &SupersolutionSpec, grid: &Grid, tau: f64, out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|s| *s = 0.0);
    let rec = intersection_numeric(spec, tau)?;
    let x = rec.x_numeric;
    let jump = spec.left_point(x, tau).v_x - spec.right_point(x, tau).v_x;
    let t = (x - grid.x_min) / grid.dx;
    if t < 0.0 || t >= (grid.len - 1) as f64 {
        return Err(Error::DomainTooSmall {
            value: x,
            limit: grid.x_max(),
        });
    }
    let j = t.floor() as usize;
    let theta = t - j as f64;
    out[j] += jump * (1.0 - theta) / grid.dx;
    out[j + 1] += jump * theta / grid.dx;
    Ok(())
}

/// `v^p - (v - w)^p`, relative-accurate for small `w/v`.
#[inline]
fn defect_mass(v: f64, vp: f64, w: f64, p: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    -vp * (p * (-w / v).ln_1p()).exp_m1()
}

/// Per-snapshot diagnostics from the sampled supersolution and the defect.
fn diagnostics_for(
    spec: &SupersolutionSpec,
    grid: &Grid,
    tau: f64,
    smp: &Sample,
    w: &[f64],
    pw: Power,
) -> Result<(SnapshotDiagnostics, Vec<f64>)> {
    let p = spec.params.p;
    let n = grid.len;
    let mut u = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    let mut best = f64::INFINITY;
    let mut arg = 0usize;
    let mut barrier = f64::NEG_INFINITY;
    for i in 0..n {
        let ui = (smp.v[i] - w[i]).max(0.0);
        u.push(ui);
        g.push(defect_mass(smp.v[i], smp.vp[i], w[i], p));
        up.push(pw.of(ui));
        let gap = smp.q[i] + w[i];
        if gap < best {
            best = gap;
            arg = i;
        }
        barrier = barrier.max(-w[i]);
    }
    let rec = intersection_numeric(spec, tau)?;
    let diag = SnapshotDiagnostics {
        tau,
        q_m: trapezoid(&g, grid.dx),
        max_u: u[arg],
        one_minus_max: best,
        argmax_x: grid.x(arg),
        mass_p: trapezoid(&up, grid.dx),
        mass_1: trapezoid(&u, grid.dx),
        barrier_violation: barrier,
        x_intersection_numeric: rec.x_numeric,
        x_intersection_asymptotic: rec.x_asymptotic,
    };
    Ok((diag, u))
}

/// Largest increase of `u = v - w` from one snapshot to the next.
fn increase(prev: &Sample, prev_w: &[f64], next: &Sample, next_w: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..prev_w.len() {
        let dv = if prev.v[i] < 0.5 || next.v[i] < 0.5 {
            next.v[i] - prev.v[i]
        } else {
            prev.q[i] - next.q[i]
        };
        worst = worst.max(dv - (next_w[i] - prev_w[i]));
    }
    worst
}

/// Evolve `u_m` from the supersolution at `-m` up to `tau_end`.
pub fn run_um(
    spec: &SupersolutionSpec,
    m: f64,
    tau_end: f64,
    cfg: &SolverConfig,
    grid: Grid,
    opts: &RunOptions,
) -> Result<AncientRun> {
    if !(m > 0.0) || !(tau_end > -m) {
        return Err(Error::InvalidParameter(format!(
            "need m > 0 and tau_end > -m, got m = {m}, tau_end = {tau_end}"
        )));
    }
    cfg.validate()?;
    let initial = build_initial_data(spec, m, grid)?;
    match opts.formulation {
        Formulation::Defect => run_defect(spec, m, tau_end, cfg, initial, opts.snapshot_every),
        Formulation::Direct => run_direct(spec, m, tau_end, cfg, initial, opts.snapshot_every),
    }
}

fn run_direct(
    spec: &SupersolutionSpec,
    m: f64,
    tau_end: f64,
    cfg: &SolverConfig,
    initial: FlowState,
    every: usize,
) -> Result<AncientRun> {
    let p = spec.params.p;
    let pw = Power::new(p);
    let grid = initial.grid;
    let traj = evolve(&initial, p, tau_end, cfg, every)?;
    let mut run = AncientRun {
        m,
        formulation: Formulation::Direct,
        grid,
        dtau: cfg.dtau,
        snapshots: Vec::new(),
        diagnostics: Vec::new(),
        monotonicity_violation: f64::NEG_INFINITY,
        extinction_time: traj.extinction_time,
        steps: traj.steps,
    };
    let mut prev: Option<(Sample, Vec<f64>)> = None;
    for (state, _) in &traj.snapshots {
        let mut smp = Sample {
            v: Vec::new(),
            q: Vec::new(),
            vp: Vec::new(),
        };
        sample(spec, &grid, state.tau, pw, &mut smp);
        let w: Vec<f64> = smp.v.iter().zip(&state.u).map(|(v, u)| v - u).collect();
        let (diag, _) = diagnostics_for(spec, &grid, state.tau, &smp, &w, pw)?;
        if let Some((ps, pwv)) = &prev {
            run.monotonicity_violation =
                run.monotonicity_violation.max(increase(ps, pwv, &smp, &w));
        }
        run.diagnostics.push(diag);
        run.snapshots.push(Snapshot {
            tau: state.tau,
            u: state.u.clone(),
            w: w.clone(),
        });
        prev = Some((smp, w));
    }
    Ok(run)
}

fn run_defect(
    spec: &SupersolutionSpec,
    m: f64,
    tau_end: f64,
    cfg: &SolverConfig,
    initial: FlowState,
    every: usize,
) -> Result<AncientRun> {
    let p = spec.params.p;
    let pw = Power::new(p);
    let pw1 = Power::new(p - 1.0);
    let grid = initial.grid;
    let n = grid.len;
    let rows = apply_boundary(&grid, BoundaryPair::DECAY);
    let inv = 1.0 / (grid.dx * grid.dx);
    let dt = cfg.dtau;
    let total_steps = ((tau_end + m) / dt).round().max(1.0) as usize;
    let every = every.max(1);

    let mut run = AncientRun {
        m,
        formulation: Formulation::Defect,
        grid,
        dtau: dt,
        snapshots: Vec::new(),
        diagnostics: Vec::new(),
        monotonicity_violation: f64::NEG_INFINITY,
        extinction_time: None,
        steps: 0,
    };

    let new_sample = || Sample {
        v: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        vp: Vec::with_capacity(n),
    };
    let mut cur = new_sample();
    sample(spec, &grid, -m, pw, &mut cur);
    let mut w = vec![0.0; n];
    let mut g_old = vec![0.0f64; n];
    let (diag, u) = diagnostics_for(spec, &grid, -m, &cur, &w, pw)?;
    run.diagnostics.push(diag);
    run.snapshots.push(Snapshot {
        tau: -m,
        u,
        w: w.clone(),
    });
    let mut snap_sample = new_sample();
    sample(spec, &grid, -m, pw, &mut snap_sample);
    let mut snap_w = w.clone();

    let mut src = vec![0.0; n];
    let (mut sub, mut diag_m, mut sup, mut rhs, mut scratch) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        Vec::new(),
    );
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];

    for k in 1..=total_steps {
        let tau = if k == total_steps {
            tau_end
        } else {
            -m + k as f64 * dt
        };
        let step = tau - (-m + (k - 1) as f64 * dt);
        sample(spec, &grid, tau, pw, &mut cur);
        kink_source(spec, &grid, tau, &mut src)?;
        let scale_src = src.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        let scale_old = g_old.iter().fold(0.0f64, |a, s| a.max(s.abs())) / step;

        let mut converged = false;
        let mut res = f64::INFINITY;
        for _iter in 0..cfg.newton_max_iter {
            // residual
            for i in 0..n {
                g[i] = defect_mass(cur.v[i], cur.vp[i], w[i], p);
            }
            let mut worst = 0.0f64;
            let mut wmax = 0.0f64;
            for i in 0..n {
                let lap = if i == 0 {
                    rows.left[0] * w[0] + rows.left[1] * w[1]
                } else if i == n - 1 {
                    rows.right[0] * w[n - 1] + rows.right[1] * w[n - 2]
                } else {
                    (w[i + 1] - 2.0 * w[i] + w[i - 1]) * inv
                };
                let f = (g[i] - g_old[i]) / step - lap + w[i] - g[i] - src[i];
                rhs[i] = -f;
                worst = worst.max(f.abs());
                wmax = wmax.max(w[i].abs());
            }
            if !worst.is_finite() {
                return Err(Error::NonFinite(format!("defect residual at tau = {tau}")));
            }
            let scale = scale_src.max(scale_old).max(wmax * inv).max(1e-300);
            res = worst / scale;
            if res <= cfg.newton_tol.min(1e-10) {
                converged = true;
                break;
            }
            for i in 0..n {
                let u = (cur.v[i] - w[i]).max(0.0);
                let dg = p * pw1.of(u);
                diag_m[i] = dg * (1.0 / step - 1.0) + 2.0 * inv + 1.0;
                sub[i] = -inv;
                sup[i] = -inv;
            }
            let u0 = (cur.v[0] - w[0]).max(0.0);
            diag_m[0] = p * pw1.of(u0) * (1.0 / step - 1.0) - rows.left[0] + 1.0;
            sup[0] = -rows.left[1];
            let un = (cur.v[n - 1] - w[n - 1]).max(0.0);
            diag_m[n - 1] = p * pw1.of(un) * (1.0 / step - 1.0) - rows.right[0] + 1.0;
            sub[n - 1] = -rows.right[1];
            thomas_solve(&sub, &diag_m, &sup, &mut rhs, &mut scratch);

            // keep u = v - w nonnegative
            let mut t = 1.0;
            for _ in 0..6 {
                if (0..n).all(|i| w[i] + t * rhs[i] <= cur.v[i]) {
                    break;
                }
                t *= 0.5;
            }
            let mut dmax = 0.0f64;
            for i in 0..n {
                trial[i] = (w[i] + t * rhs[i]).min(cur.v[i]);
                dmax = dmax.max((t * rhs[i]).abs());
            }
            std::mem::swap(&mut w, &mut trial);
            if dmax <= 1e-14 * wmax.max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NewtonDivergence {
                residual: res,
                iterations: cfg.newton_max_iter,
            });
        }
        for i in 0..n {
            g_old[i] = defect_mass(cur.v[i], cur.vp[i], w[i], p);
        }
        run.steps = k;

        let max_u = (0..n)
            .map(|i| cur.v[i] - w[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let extinct = max_u < cfg.extinction_threshold;
        if k % every == 0 || k == total_steps || extinct {
            let (diag, u) = diagnostics_for(spec, &grid, tau, &cur, &w, pw)?;
            run.monotonicity_violation =
                run.monotonicity_violation
                    .max(increase(&snap_sample, &snap_w, &cur, &w));
            std::mem::swap(&mut snap_sample, &mut cur);
            snap_w.copy_from_slice(&w);
            // `cur` is resampled at the next step, so the swap is harmless
            run.diagnostics.push(diag);
            run.snapshots.push(Snapshot {
                tau,
                u,
                w: w.clone(),
            });
        }
        if extinct {
            run.extinction_time = Some(tau);
            break;
        }
    }
    Ok(run)
}

/// Runs for several `m` on a shared grid, spread over `workers` threads.
/// Results come back in the order of `ms`.
pub fn run_family(
    spec: &SupersolutionSpec,
    ms: &[f64],
    tau_end: f64,
    cfg: &SolverConfig,
    grid: Grid,
    opts: &RunOptions,
    workers: usize,
) -> Vec<Result<AncientRun>> {
    let jobs: Vec<(f64, SolverConfig, Grid)> = ms.iter().map(|&m| (m, *cfg, grid)).collect();
    run_jobs(spec, &jobs, tau_end, opts, workers)
}

/// Independent `(m, solver, grid)` jobs on a small thread pool.
pub fn run_jobs(
    spec: &SupersolutionSpec,
    jobs: &[(f64, SolverConfig, Grid)],
    tau_end: f64,
    opts: &RunOptions,
    workers: usize,
) -> Vec<Result<AncientRun>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AncientRun>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= jobs.len() {
                    break;
                }
                let (m, cfg, grid) = jobs[k];
                let r = run_um(spec, m, tau_end, &cfg, grid, opts);
                results.lock().expect("result slot poisoned")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result slot poisoned")
        .into_iter()
        .map(|r| r.expect("every job writes its slot"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub prefactor: f64,
    pub residual: f64,
    pub samples: usize,
}

impl From<LinearFit> for RateFit {
    fn from(f: LinearFit) -> Self {
        Self {
            rate: f.slope,
            prefactor: f.intercept.exp(),
            residual: f.max_residual,
            samples: f.samples,
        }
    }
}

/// Regression of `ln Q` on `tau`.
pub fn fit_decay_rate(series: &[(f64, f64)]) -> Result<RateFit> {
    let t: Vec<f64> = series.iter().map(|s| s.0).collect();
    let y: Vec<f64> = series.iter().map(|s| s.1).collect();
    Ok(log_linear_fit(&t, &y)?.into())
}

/// Entries of a series with `tau` in `[lo, hi]`.
pub fn window(series: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= lo - 1e-9 && *t <= hi + 1e-9)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxBound {
    /// fitted slope of `ln(1 - max u)`
    pub rate: f64,
    /// `min` and `max` of `(1 - max u) e^{-d tau}` over the window
    pub lower_prefactor: f64,
    pub upper_prefactor: f64,
    pub max_below_one: bool,
    /// `max |argmax - x(tau)|` over the window
    pub argmax_offset: f64,
}

pub fn max_bound_check(run: &AncientRun, d: f64, lo: f64, hi: f64) -> Result<MaxBound> {
    let rows: Vec<&SnapshotDiagnostics> = run
        .diagnostics
        .iter()
        .filter(|s| s.tau >= lo - 1e-9 && s.tau <= hi + 1e-9)
        .collect();
    let series: Vec<(f64, f64)> = rows.iter().map(|s| (s.tau, s.one_minus_max)).collect();
    let fit = fit_decay_rate(&series)?;
    let pref: Vec<f64> = rows
        .iter()
        .map(|s| s.one_minus_max * (-d * s.tau).exp())
        .collect();
    Ok(MaxBound {
        rate: fit.rate,
        lower_prefactor: pref.iter().copied().fold(f64::INFINITY, f64::min),
        upper_prefactor: pref.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_below_one: run
            .diagnostics
            .iter()
            .all(|s| s.max_u < 1.0 && s.one_minus_max > 0.0),
        argmax_offset: rows
            .iter()
            .map(|s| (s.argmax_x - s.x_intersection_numeric).abs())
            .fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// `(m, sup_tau Q_m e^{-d tau})` over `tau > -m + transient`
    pub per_m: Vec<(f64, f64)>,
    /// the common constant, the largest of the per-run ones
    pub d_const: f64,
    /// largest over smallest per-run constant
    pub spread: f64,
    /// `sup e^{-((p-1)/p) tau} Q_m / (d_const e^{mu tau})` with
    /// `mu = d - (p-1)/p`; at most 1 whenever the envelope holds
    pub rescaled_ratio: f64,
}

/// The bound `Q_m <= D e^{d tau}` with one `D` for every run. Each run needs
/// a positive `Q_m` somewhere after the transient.
pub fn uniform_envelope(runs: &[&AncientRun], d: f64, p: f64, transient: f64) -> Result<Envelope> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("no runs for the envelope".into()));
    }
    let mu = d - (p - 1.0) / p;
    let mut per_m = Vec::new();
    for r in runs {
        let scaled: Vec<(f64, f64)> = r
            .diagnostics
            .iter()
            .filter(|s| s.tau >= -r.m + transient)
            .map(|s| (s.tau, s.q_m * (-d * s.tau).exp()))
            .collect();
        if scaled.is_empty() {
            return Err(Error::FitWindowTooSmall {
                found: 0,
                needed: 1,
            });
        }
        let (at, sup) = scaled
            .into_iter()
            .fold((f64::NAN, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
        if !(sup > 0.0) {
            return Err(Error::NonPositiveInFit { at, value: sup });
        }
        per_m.push((r.m, sup));
    }
    let d_const = per_m.iter().map(|x| x.1).fold(0.0, f64::max);
    let d_min = per_m.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let mut ratio = 0.0f64;
    for r in runs {
        for s in r.diagnostics.iter().filter(|s| s.tau >= -r.m + transient) {
            let hat = (-((p - 1.0) / p) * s.tau).exp() * s.q_m;
            ratio = ratio.max(hat / (d_const * (mu * s.tau).exp()));
        }
    }
    Ok(Envelope {
        per_m,
        d_const,
        spread: d_const / d_min,
        rescaled_ratio: ratio,
    })
}

/// `sup |u_a - u_b|` at the snapshot nearest `tau`, over the nodes of the
/// coarser grid (both grids must share their endpoints).
pub fn sup_difference(a: &AncientRun, b: &AncientRun, tau: f64) -> Result<f64> {
    let (_, sa) = a.snapshot_near(tau).ok_or_else(|| {
        Error::InvalidParameter(format!("no snapshot at tau = {tau} (m = {})", a.m))
    })?;
    let (_, sb) = b.snapshot_near(tau).ok_or_else(|| {
        Error::InvalidParameter(format!("no snapshot at tau = {tau} (m = {})", b.m))
    })?;
    let (fine, coarse, sf, sc) = if a.grid.len >= b.grid.len {
        (&a.grid, &b.grid, sa, sb)
    } else {
        (&b.grid, &a.grid, sb, sa)
    };
    if (fine.x_min - coarse.x_min).abs() > 1e-9 || (fine.x_max() - coarse.x_max()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "grids do not share their endpoints".into(),
        ));
    }
    let factor = (fine.len - 1) / (coarse.len - 1).max(1);
    if factor == 0 || factor * (coarse.len - 1) != fine.len - 1 {
        return Err(Error::InvalidParameter("grids are not nested".into()));
    }
    // w carries the difference at full precision: u_a - u_b = w_b - w_a
    Ok((0..coarse.len)
        .map(|i| (sc.w[i] - sf.w[i * factor]).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(l1: f64, l2: f64, h: f64, hp: f64) -> SupersolutionSpec {
        let params = ModelParams::new(3, l1, l2, h, hp).unwrap();
        SupersolutionSpec::build(params, &ShootOptions::default()).unwrap()
    }

    #[test]
    fn symmetric_supersolution_is_even() {
        let s = spec(1.2, 1.2, 0.3, 0.3);
        for x in [0.5, 3.0, 17.0, 40.0] {
            for tau in [-20.0, -5.0] {
                let a = supersolution_eval(&s, x, tau);
                let b = supersolution_eval(&s, -x, tau);
                assert!((a - b).abs() <= 1e-14 * a.max(1e-300), "x={x} tau={tau}");
            }
        }
    }

    #[test]
    fn far_left_is_the_left_wave() {
        let s = spec(1.2, 1.5, 0.0, 0.0);
        let tau = -10.0;
        let x = -60.0;
        let pt = s.point(x, tau);
        assert_eq!(pt.branch, Orientation::Left);
        let ratio = pt.v / (x + 1.2 * 10.0f64).exp();
        let ratio2 = s.point(x - 1.0, tau).v / (x - 1.0 + 12.0f64).exp();
        assert!((ratio / ratio2 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_crossing_sits_at_the_origin() {
        let s = spec(1.2, 1.2, 0.0, 0.0);
        for tau in [-30.0, -10.0, -2.0] {
            let r = intersection_numeric(&s, tau).unwrap();
            assert!(r.x_numeric.abs() < 1e-9, "tau {tau}: {}", r.x_numeric);
            assert!(r.root_residual < 1e-12);
        }
    }

    #[test]
    fn decay_rate_from_exact_exponential() {
        let series: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = -30.0 + 0.5 * k as f64;
                (t, 3.0 * (0.9 * t).exp())
            })
            .collect();
        let f = fit_decay_rate(&series).unwrap();
        assert!((f.rate - 0.9).abs() < 1e-10);
        assert!((f.prefactor - 3.0).abs() < 1e-10);
        let bad = vec![(0.0, 1.0), (1.0, -1.0)];
        assert!(fit_decay_rate(&bad).is_err());
    }

    #[test]
    fn mismatched_speeds_are_rejected() {
        let a = spec(1.2, 1.2, 0.0, 0.0);
        let b = spec(1.2, 1.5, 0.0, 0.0);
        assert_eq!(
            distinguish_functional(&a, &b, -10.0, &Quadrature::default()).unwrap_err(),
            Error::MismatchedSpeeds
        );
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let s = spec(1.2, 1.2, 0.0, 0.0);
        let g = Grid::symmetric(10.0, 0.1).unwrap();
        assert!(matches!(
            build_initial_data(&s, 10.0, g),
            Err(Error::DomainTooSmall { .. })
        ));
    }
}
