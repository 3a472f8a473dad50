//! Backward-Euler finite differences for `(u^p)_tau = u_xx + u^p - u` on a
//! truncated interval, with a Newton solve per step and exponential-decay
//! (Robin) or Neumann boundary closures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::CsvTable;
use crate::numerics::{thomas_solve, trapezoid, Power};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub tau: f64,
    pub grid: Grid,
    pub u: Vec<f64>,
}

impl FlowState {
    pub fn new(tau: f64, grid: Grid, u: Vec<f64>) -> Result<Self> {
        if u.len() != grid.len {
            return Err(Error::InvalidParameter(format!(
                "{} samples for a grid of {} nodes",
                u.len(),
                grid.len
            )));
        }
        if let Some(bad) = u.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "state values must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self { tau, grid, u })
    }

    pub fn from_fn(tau: f64, grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let u = (0..grid.len).map(|i| f(grid.x(i))).collect();
        Self::new(tau, grid, u)
    }

    pub fn max_u(&self) -> f64 {
        self.u.iter().copied().fold(0.0, f64::max)
    }
}

/// Closure at one end of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `u ~ e^{x}` at the left end, `u ~ e^{-x}` at the right end
    DecayRobin,
    /// zero slope
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub left: BoundaryKind,
    pub right: BoundaryKind,
}

impl BoundaryPair {
    pub const DECAY: Self = Self {
        left: BoundaryKind::DecayRobin,
        right: BoundaryKind::DecayRobin,
    };
}

impl Default for BoundaryPair {
    fn default() -> Self {
        Self::DECAY
    }
}

/// Ghost value factor `u_ghost = g u_boundary`. For the decay closure this is
/// exact on `e^{x}` (left) and `e^{-x}` (right).
pub fn ghost_factor(kind: BoundaryKind, dx: f64) -> f64 {
    match kind {
        BoundaryKind::DecayRobin => (-dx).exp(),
        BoundaryKind::Neumann => 1.0,
    }
}

/// Second-difference rows at the two boundary nodes after eliminating the
/// ghosts: `D^2 u_0 = a u_0 + b u_1`, `D^2 u_N = a' u_N + b' u_{N-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilRows {
    pub left: [f64; 2],
    pub right: [f64; 2],
}

pub fn apply_boundary(grid: &Grid, bc: BoundaryPair) -> StencilRows {
    let inv = 1.0 / (grid.dx * grid.dx);
    let gl = ghost_factor(bc.left, grid.dx);
    let gr = ghost_factor(bc.right, grid.dx);
    StencilRows {
        left: [(gl - 2.0) * inv, inv],
        right: [(gr - 2.0) * inv, inv],
    }
}

/// Residuals of the boundary conditions themselves, using one-sided
/// second-order differences: `u_x - u` (or `u_x`) on the left, `u_x + u`
/// (or `u_x`) on the right.
pub fn boundary_residuals(state: &FlowState, bc: BoundaryPair) -> (f64, f64) {
    let u = &state.u;
    let n = u.len();
    let dx = state.grid.dx;
    let ux_left = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx);
    let ux_right = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * dx);
    let left = match bc.left {
        BoundaryKind::DecayRobin => ux_left - u[0],
        BoundaryKind::Neumann => ux_left,
    };
    let right = match bc.right {
        BoundaryKind::DecayRobin => ux_right + u[n - 1],
        BoundaryKind::Neumann => ux_right,
    };
    (left, right)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dtau: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub bc: BoundaryPair,
    pub extinction_threshold: f64,
    /// smallest step the adaptive halving may reach
    pub min_dtau: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dtau: 1e-3,
            newton_tol: 1e-9,
            newton_max_iter: 30,
            bc: BoundaryPair::DECAY,
            extinction_threshold: 1e-10,
            min_dtau: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dtau > 0.0 && self.dtau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dtau = {} must be positive",
                self.dtau
            )));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "newton_tol = {} must be positive",
                self.newton_tol
            )));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "newton_max_iter must be at least 1".into(),
            ));
        }
        if !(self.min_dtau > 0.0 && self.min_dtau <= self.dtau) {
            return Err(Error::InvalidParameter(format!(
                "min_dtau = {} must lie in (0, dtau]",
                self.min_dtau
            )));
        }
        if !(self.extinction_threshold >= 0.0) {
            return Err(Error::InvalidParameter(
                "extinction threshold must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub tau: f64,
    pub dtau: f64,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub mass_p: f64,
    pub mass_1: f64,
    pub max_u: f64,
}

/// Trapezoid integrals `(int u^p, int u)`.
pub fn mass_integrals(state: &FlowState, p: f64) -> (f64, f64) {
    let pw = Power::new(p);
    let up: Vec<f64> = state.u.iter().map(|&v| pw.of(v)).collect();
    (
        trapezoid(&up, state.grid.dx),
        trapezoid(&state.u, state.grid.dx),
    )
}

fn report_for(state: &FlowState, p: f64, dtau: f64, iters: usize, residual: f64) -> StepReport {
    let (mass_p, mass_1) = mass_integrals(state, p);
    StepReport {
        tau: state.tau,
        dtau,
        newton_iters: iters,
        final_residual: residual,
        mass_p,
        mass_1,
        max_u: state.max_u(),
    }
}

/// Tridiagonal Newton workspace reused across steps.
#[derive(Debug, Default)]
struct Workspace {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
    trial: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, n: usize) {
        for v in [
            &mut self.sub,
            &mut self.diag,
            &mut self.sup,
            &mut self.rhs,
            &mut self.trial,
        ] {
            v.resize(n, 0.0);
        }
    }
}

/// Residual `F_i = (U_i^p - u_i^p)/dt - D^2 U_i - U_i^p + U_i` into `out`,
/// returning its sup norm.
fn residual(
    big_u: &[f64],
    old_p: &[f64],
    p: Power,
    dt: f64,
    rows: &StencilRows,
    inv: f64,
    out: &mut [f64],
) -> f64 {
    let n = big_u.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let lap = if i == 0 {
            rows.left[0] * big_u[0] + rows.left[1] * big_u[1]
        } else if i == n - 1 {
            rows.right[0] * big_u[n - 1] + rows.right[1] * big_u[n - 2]
        } else {
            (big_u[i + 1] - 2.0 * big_u[i] + big_u[i - 1]) * inv
        };
        let up = p.of(big_u[i]);
        let f = (up - old_p[i]) / dt - lap - up + big_u[i];
        out[i] = f;
        worst = worst.max(f.abs());
    }
    worst
}

/// One backward-Euler step of size `cfg.dtau`.
pub fn step_implicit(
    state: &FlowState,
    p: f64,
    cfg: &SolverConfig,
) -> Result<(FlowState, StepReport)> {
    let mut ws = Workspace::default();
    step_with(state, p, cfg, cfg.dtau, &mut ws)
}

fn step_with(
    state: &FlowState,
    p: f64,
    cfg: &SolverConfig,
    dt: f64,
    ws: &mut Workspace,
) -> Result<(FlowState, StepReport)> {
    let n = state.grid.len;
    ws.resize(n);
    let rows = apply_boundary(&state.grid, cfg.bc);
    let inv = 1.0 / (state.grid.dx * state.grid.dx);
    let pw = Power::new(p);
    let pw1 = Power::new(p - 1.0);
    let old_p: Vec<f64> = state.u.iter().map(|&v| pw.of(v)).collect();
    let mut big_u = state.u.clone();
    let mut res = f64::INFINITY;
    for iter in 0..=cfg.newton_max_iter {
        res = residual(&big_u, &old_p, pw, dt, &rows, inv, &mut ws.rhs);
        if !res.is_finite() {
            return Err(Error::NonFinite(format!(
                "newton residual at tau = {}",
                state.tau + dt
            )));
        }
        if res <= cfg.newton_tol {
            let next = FlowState {
                tau: state.tau + dt,
                grid: state.grid,
                u: big_u,
            };
            let report = report_for(&next, p, dt, iter, res);
            return Ok((next, report));
        }
        if iter == cfg.newton_max_iter {
            break;
        }
        for i in 0..n {
            let dfp = p * pw1.of(big_u[i]);
            ws.diag[i] = dfp * (1.0 / dt - 1.0) + 2.0 * inv + 1.0;
            ws.sub[i] = -inv;
            ws.sup[i] = -inv;
            ws.rhs[i] = -ws.rhs[i];
        }
        ws.diag[0] = p * pw1.of(big_u[0]) * (1.0 / dt - 1.0) - rows.left[0] + 1.0;
        ws.sup[0] = -rows.left[1];
        ws.diag[n - 1] = p * pw1.of(big_u[n - 1]) * (1.0 / dt - 1.0) - rows.right[0] + 1.0;
        ws.sub[n - 1] = -rows.right[1];
        thomas_solve(&ws.sub, &ws.diag, &ws.sup, &mut ws.rhs, &mut ws.scratch);

        // halve the update while it would leave the domain of u^p, then clamp
        let mut t = 1.0;
        for _ in 0..6 {
            if big_u.iter().zip(&ws.rhs).all(|(u, d)| u + t * d >= 0.0) {
                break;
            }
            t *= 0.5;
        }
        for i in 0..n {
            ws.trial[i] = (big_u[i] + t * ws.rhs[i]).max(0.0);
        }
        let step_size = ws.rhs.iter().fold(0.0f64, |a, d| a.max(d.abs())) * t;
        std::mem::swap(&mut big_u, &mut ws.trial);
        let scale = big_u.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        if step_size <= 1e-15 * scale {
            res = residual(&big_u, &old_p, pw, dt, &rows, inv, &mut ws.rhs);
            if res.is_finite() && res <= cfg.newton_tol.max(1e-12 * inv * scale) {
                let next = FlowState {
                    tau: state.tau + dt,
                    grid: state.grid,
                    u: big_u,
                };
                let report = report_for(&next, p, dt, iter + 1, res);
                return Ok((next, report));
            }
        }
    }
    Err(Error::NewtonDivergence {
        residual: res,
        iterations: cfg.newton_max_iter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// snapshots with the report of the step that produced them; the first
    /// entry is the initial state
    pub snapshots: Vec<(FlowState, StepReport)>,
    /// time at which `max u` first fell below the extinction threshold
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extinction_time: Option<f64>,
    pub steps: usize,
    pub halvings: usize,
    /// `(tau, int u^p, int u)` after every step, starting from the initial state
    pub mass_log: Vec<[f64; 3]>,
}

impl Trajectory {
    /// Long-format table `(tau, x, u)`.
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["tau", "x", "u"]);
        for (s, _) in &self.snapshots {
            for i in 0..s.grid.len {
                t.push_row(&[s.tau, s.grid.x(i), s.u[i]]);
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassIdentity {
    /// largest `|d/dtau int u^p - (int u^p - int u)|`, by backward differences
    pub max_residual: f64,
    /// largest `int u^p` seen
    pub max_mass_p: f64,
    pub samples: usize,
}

/// Discrete check of `d/dtau int u^p = int u^p - int u` (boundary fluxes
/// neglected) along every step of a trajectory.
pub fn mass_identity(traj: &Trajectory) -> Result<MassIdentity> {
    if traj.mass_log.len() < 2 {
        return Err(Error::FitWindowTooSmall {
            found: traj.mass_log.len(),
            needed: 2,
        });
    }
    let mut out = MassIdentity {
        max_residual: 0.0,
        max_mass_p: 0.0,
        samples: traj.mass_log.len() - 1,
    };
    for w in traj.mass_log.windows(2) {
        let [t0, p0, _] = w[0];
        let [t1, p1, m1] = w[1];
        let rate = (p1 - p0) / (t1 - t0);
        out.max_residual = out.max_residual.max((rate - (p1 - m1)).abs());
        out.max_mass_p = out.max_mass_p.max(p0).max(p1);
    }
    Ok(out)
}

/// Repeated implicit steps from `state.tau` to `tau_end`, keeping every
/// `snapshot_every`-th state (and always the last one). A failed Newton solve
/// halves the step; the nominal step is restored after successes.
pub fn evolve(
    state: &FlowState,
    p: f64,
    tau_end: f64,
    cfg: &SolverConfig,
    snapshot_every: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut traj = Trajectory {
        snapshots: Vec::new(),
        extinction_time: None,
        steps: 0,
        halvings: 0,
        mass_log: Vec::new(),
    };
    if !(tau_end > state.tau) {
        return Ok(traj);
    }
    let every = snapshot_every.max(1);
    let mut ws = Workspace::default();
    let mut current = state.clone();
    let first = report_for(&current, p, 0.0, 0, 0.0);
    traj.mass_log.push([first.tau, first.mass_p, first.mass_1]);
    traj.snapshots.push((current.clone(), first));
    let tau0 = state.tau;
    let mut dt = cfg.dtau;
    let mut since_snapshot = 0usize;
    // nominal steps land on tau0 + k dtau exactly
    let mut nominal_k = 0u64;
    loop {
        let remaining = tau_end - current.tau;
        if remaining <= 1e-12 * cfg.dtau.max(tau_end.abs()) {
            break;
        }
        let this_dt = dt.min(remaining);
        match step_with(&current, p, cfg, this_dt, &mut ws) {
            Ok((mut next, mut report)) => {
                if dt == cfg.dtau && this_dt == cfg.dtau {
                    nominal_k += 1;
                    next.tau = tau0 + nominal_k as f64 * cfg.dtau;
                    report.tau = next.tau;
                } else {
                    nominal_k = ((next.tau - tau0) / cfg.dtau).floor() as u64;
                }
                current = next;
                traj.steps += 1;
                traj.mass_log
                    .push([report.tau, report.mass_p, report.mass_1]);
                since_snapshot += 1;
                if dt < cfg.dtau {
                    dt = (dt * 2.0).min(cfg.dtau);
                }
                let extinct = report.max_u < cfg.extinction_threshold;
                let done = tau_end - current.tau <= 1e-12 * cfg.dtau.max(tau_end.abs());
                if since_snapshot >= every || extinct || done {
                    traj.snapshots.push((current.clone(), report));
                    since_snapshot = 0;
                }
                if extinct {
                    traj.extinction_time = Some(current.tau);
                    break;
                }
            }
            Err(Error::NewtonDivergence {
                residual,
                iterations,
            }) => {
                if dt * 0.5 < cfg.min_dtau {
                    return Err(Error::NewtonDivergence {
                        residual,
                        iterations,
                    });
                }
                dt *= 0.5;
                traj.halvings += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_one_is_a_fixed_point() {
        let grid = Grid::symmetric(5.0, 0.05).unwrap();
        let s = FlowState::from_fn(0.0, grid, |_| 1.0).unwrap();
        let cfg = SolverConfig {
            bc: BoundaryPair {
                left: BoundaryKind::Neumann,
                right: BoundaryKind::Neumann,
            },
            ..SolverConfig::default()
        };
        let (next, rep) = step_implicit(&s, 5.0, &cfg).unwrap();
        assert!(next.u.iter().all(|&v| v == 1.0));
        assert_eq!(rep.newton_iters, 0);
    }

    #[test]
    fn robin_rows_are_exact_on_exponentials() {
        let grid = Grid::new(-20.0, -10.0, 0.1).unwrap();
        let s = FlowState::from_fn(0.0, grid, f64::exp).unwrap();
        let rows = apply_boundary(&grid, BoundaryPair::DECAY);
        let lap0 = rows.left[0] * s.u[0] + rows.left[1] * s.u[1];
        let exact = (s.u[1] - 2.0 * s.u[0] + s.u[0] * (-0.1f64).exp()) / 0.01;
        assert!((lap0 - exact).abs() < 1e-20);
        let (l, _) = boundary_residuals(&s, BoundaryPair::DECAY);
        // one-sided difference error is dx^2 u'''/3
        assert!(l.abs() < 0.5 * 0.01 * s.u[0]);
    }

    #[test]
    fn decay_closure_on_constants_has_unit_flux() {
        let grid = Grid::symmetric(2.0, 0.01).unwrap();
        let s = FlowState::from_fn(0.0, grid, |_| 1.0).unwrap();
        let (l, r) = boundary_residuals(&s, BoundaryPair::DECAY);
        assert!((l + 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evolve_trivial_horizon_is_empty() {
        let grid = Grid::symmetric(2.0, 0.1).unwrap();
        let s = FlowState::from_fn(0.0, grid, |x| (-x * x).exp()).unwrap();
        let t = evolve(&s, 5.0, 0.0, &SolverConfig::default(), 1).unwrap();
        assert!(t.snapshots.is_empty());
    }

    #[test]
    fn mass_of_trivial_states() {
        let grid = Grid::new(0.0, 3.0, 0.01).unwrap();
        let zero = FlowState::from_fn(0.0, grid, |_| 0.0).unwrap();
        assert_eq!(mass_integrals(&zero, 5.0), (0.0, 0.0));
        let one = FlowState::from_fn(0.0, grid, |_| 1.0).unwrap();
        let (a, b) = mass_integrals(&one, 5.0);
        assert!((a - 3.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_states() {
        let grid = Grid::symmetric(1.0, 0.1).unwrap();
        assert!(FlowState::from_fn(0.0, grid, |x| x).is_err());
    }

    #[test]
    fn small_bump_goes_extinct() {
        let grid = Grid::symmetric(10.0, 0.1).unwrap();
        let s = FlowState::from_fn(0.0, grid, |x| 0.2 * (-x * x).exp()).unwrap();
        let cfg = SolverConfig {
            dtau: 1e-2,
            extinction_threshold: 1e-6,
            min_dtau: 1e-6,
            ..SolverConfig::default()
        };
        let t = evolve(&s, 5.0, 50.0, &cfg, 10).unwrap();
        let te = t
            .extinction_time
            .expect("compact data vanishes in finite time");
        assert!(te > 0.0 && te < 50.0);
        let maxes: Vec<f64> = t.snapshots.iter().map(|(_, r)| r.max_u).collect();
        assert!(maxes.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
