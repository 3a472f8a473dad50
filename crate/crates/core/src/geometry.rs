//! Curvature of the rotationally symmetric metric `g = u_raw^{4/(n-2)} g_cyl`
//! carried by a conformal factor on the cylinder `R x S^{n-1}`.
//!
//! States live in normalized coordinates; every geometric quantity is
//! evaluated in unnormalized ones (`x_raw = x / sqrt(beta)`, `u_raw = u / A`).
//! Derivatives are taken of `ln u`, which stays well scaled in the
//! exponentially small tails. Where `u` falls below a mask level the
//! cylindrical formulas lose all precision, and the caps are evaluated in
//! polar coordinates `r = e^{x_raw}` instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::CsvTable;
use crate::model::{exponent_p, NormalizationMap};
use crate::numerics::linear_fit;
use crate::pde::FlowState;
use crate::soliton::Orientation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryOptions {
    /// cylindrical evaluation only where `u` and its neighbours exceed this
    pub mask: f64,
    /// polar grid step in units of the cap radius `M`
    pub polar_dy: f64,
    /// polar grid extent in units of `M`
    pub polar_extent: f64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            mask: 0.1,
            polar_dy: 0.02,
            polar_extent: 2.0,
        }
    }
}

/// Dimension-dependent constants.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Frame {
    n: f64,
    p: f64,
    map: NormalizationMap,
    /// `ln A`
    log_amp: f64,
    /// `4(n-1)/(n-2)`
    c_bar: f64,
    /// scalar curvature of the unit cylinder, `(n-1)(n-2)`
    r_cyl: f64,
}

impl Frame {
    fn new(n: u32) -> Result<Self> {
        let p = exponent_p(n)?;
        let map = NormalizationMap::for_dimension(n)?;
        let nf = f64::from(n);
        Ok(Self {
            n: nf,
            p,
            map,
            log_amp: map.amplitude().ln(),
            c_bar: 4.0 * (nf - 1.0) / (nf - 2.0),
            r_cyl: (nf - 1.0) * (nf - 2.0),
        })
    }

    fn sqrt_beta(&self) -> f64 {
        self.map.beta.sqrt()
    }
}

/// The two sectional curvatures and everything built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointCurvature {
    /// planes containing the radial direction
    pub k_radial: f64,
    /// planes tangent to the spheres
    pub k_spherical: f64,
    pub ric_radial: f64,
    pub ric_spherical: f64,
    /// `ric_radial + (n-1) ric_spherical`
    pub scalar: f64,
    pub rm_norm: f64,
}

impl PointCurvature {
    fn from_sectional(k_radial: f64, k_spherical: f64, n: f64) -> Self {
        let ric_radial = (n - 1.0) * k_radial;
        let ric_spherical = k_radial + (n - 2.0) * k_spherical;
        Self {
            k_radial,
            k_spherical,
            ric_radial,
            ric_spherical,
            scalar: ric_radial + (n - 1.0) * ric_spherical,
            // curvature operator eigenvalues with their multiplicities
            rm_norm: ((n - 1.0) * k_radial * k_radial
                + 0.5 * (n - 1.0) * (n - 2.0) * k_spherical * k_spherical)
                .sqrt(),
        }
    }
}

/// Value and first two normalized-coordinate derivatives of `ln u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJet {
    pub l: f64,
    pub lx: f64,
    pub lxx: f64,
}

impl LogJet {
    fn centered(lm: f64, l0: f64, lp: f64, dx: f64) -> Self {
        Self {
            l: l0,
            lx: (lp - lm) / (2.0 * dx),
            lxx: (lp - 2.0 * l0 + lm) / (dx * dx),
        }
    }
}

/// `1 - ((p-1)/p) u^{-p} (u_xx + u^p - u)`, written through `l = ln u` as
/// `1/p + ((p-1)/p) u^{1-p} (1 - l_x^2 - l_xx)`.
pub fn normalized_scalar_from_jet(jet: LogJet, p: f64) -> f64 {
    1.0 / p + ((p - 1.0) / p) * ((1.0 - p) * jet.l).exp() * (1.0 - jet.lx * jet.lx - jet.lxx)
}

/// The same expression from `u` and its exact derivatives.
pub fn normalized_scalar_from_derivatives(u: f64, u_xx: f64, p: f64) -> f64 {
    1.0 - ((p - 1.0) / p) * u.powf(-p) * (u_xx + u.powf(p) - u)
}

/// Sectional curvatures of `e^{2f}(dx_raw^2 + g_S)` with `f = (2/(n-2)) ln u_raw`.
fn cylindrical_point(jet: LogJet, fr: &Frame) -> PointCurvature {
    let sb = fr.sqrt_beta();
    let f_x = (2.0 / (fr.n - 2.0)) * sb * jet.lx;
    let f_xx = (2.0 / (fr.n - 2.0)) * fr.map.beta * jet.lxx;
    let f = (2.0 / (fr.n - 2.0)) * (jet.l - fr.log_amp);
    let e = (-2.0 * f).exp();
    PointCurvature::from_sectional(-e * f_xx, e * (1.0 - f_x * f_x), fr.n)
}

/// Affine relation `R_geom = scale R_norm + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub offset: f64,
}

impl Calibration {
    pub fn to_normalized(&self, r_geometric: f64) -> f64 {
        (r_geometric - self.offset) / self.scale
    }
}

/// Calibration from the two constant states `u = 1` and `u = 1/2`.
///
/// The round cylinder and the steady states both have `R_norm = 1`, so they
/// fix only one point of the line; two constants fix both.
pub fn calibrate(n: u32) -> Result<Calibration> {
    let grid = Grid::symmetric(1.0, 0.1)?;
    let mid = grid.len / 2;
    let eval = |c: f64| -> Result<(f64, f64)> {
        let s = FlowState::from_fn(0.0, grid, |_| c)?;
        let prof = curvature_profile(&s, n, &GeometryOptions::default())?;
        let k = prof
            .x
            .iter()
            .position(|&x| (x - grid.x(mid)).abs() < 1e-12)
            .ok_or_else(|| Error::InvalidParameter("calibration grid too small".into()))?;
        Ok((prof.r_normalized[k], prof.r_geometric[k]))
    };
    let (a1, b1) = eval(1.0)?;
    let (a2, b2) = eval(0.5)?;
    let scale = (b2 - b1) / (a2 - a1);
    Ok(Calibration {
        scale,
        offset: b1 - scale * a1,
    })
}

/// `scale = (alpha/beta) (n-1)(n-2) p/(p-1)`, `offset = -(alpha/beta)(n-1)(n-2)/(p-1)`.
pub fn affine_constants(n: u32) -> Result<Calibration> {
    let fr = Frame::new(n)?;
    let k = fr.map.alpha / fr.map.beta * fr.r_cyl;
    Ok(Calibration {
        scale: k * fr.p / (fr.p - 1.0),
        offset: -k / (fr.p - 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    /// normalized positions of the evaluated nodes
    pub x: Vec<f64>,
    pub r_normalized: Vec<f64>,
    /// `u_raw^{-p}(-c_n u_raw'' + (n-1)(n-2) u_raw)` with
    /// `u_raw''/u_raw = (ln u_raw)'' + (ln u_raw)'^2`
    pub r_geometric: Vec<f64>,
    pub ric_radial: Vec<f64>,
    pub ric_spherical: Vec<f64>,
    /// `w_x^2 - w w_xx` with `w = u_raw^{4/(n-2)}`
    pub sec_cond1: Vec<f64>,
    /// `4 w^2 - w_x^2`
    pub sec_cond2: Vec<f64>,
    pub rm_norm: Vec<f64>,
}

impl CurvatureProfile {
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "x",
            "R_normalized",
            "R_geometric",
            "ric_radial",
            "ric_spherical",
            "cond1",
            "cond2",
            "rm_norm",
        ]);
        for i in 0..self.x.len() {
            t.push_row(&[
                self.x[i],
                self.r_normalized[i],
                self.r_geometric[i],
                self.ric_radial[i],
                self.ric_spherical[i],
                self.sec_cond1[i],
                self.sec_cond2[i],
                self.rm_norm[i],
            ]);
        }
        t
    }

    /// `max |ric_radial + (n-1) ric_spherical - R_geom|`.
    pub fn trace_defect(&self, n: u32) -> f64 {
        let nf = f64::from(n);
        (0..self.x.len())
            .map(|i| {
                (self.ric_radial[i] + (nf - 1.0) * self.ric_spherical[i] - self.r_geometric[i])
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Curvature at every interior node whose three-point stencil clears the mask.
pub fn curvature_profile(
    state: &FlowState,
    n: u32,
    opts: &GeometryOptions,
) -> Result<CurvatureProfile> {
    let fr = Frame::new(n)?;
    let g = state.grid;
    let u = &state.u;
    let dx = g.dx;
    let w_exp = 4.0 / (fr.n - 2.0);
    let mut prof = CurvatureProfile {
        x: Vec::new(),
        r_normalized: Vec::new(),
        r_geometric: Vec::new(),
        ric_radial: Vec::new(),
        ric_spherical: Vec::new(),
        sec_cond1: Vec::new(),
        sec_cond2: Vec::new(),
        rm_norm: Vec::new(),
    };
    for i in 1..g.len.saturating_sub(1) {
        let (um, u0, up) = (u[i - 1], u[i], u[i + 1]);
        if um < opts.mask || u0 < opts.mask || up < opts.mask {
            continue;
        }
        let jet = LogJet::centered(um.ln(), u0.ln(), up.ln(), dx);
        let pc = cylindrical_point(jet, &fr);

        // u_raw''/u_raw and w'/w, w''/w in raw coordinates
        let ratio = fr.map.beta * (jet.lxx + jet.lx * jet.lx);
        let e = ((1.0 - fr.p) * (jet.l - fr.log_amp)).exp();
        let r_geom = e * (-fr.c_bar * ratio + fr.r_cyl);
        let w0 = (w_exp * (jet.l - fr.log_amp)).exp();
        let lw_x = w_exp * fr.sqrt_beta() * jet.lx;
        let lw_xx = w_exp * fr.map.beta * jet.lxx;
        // w_x^2 - w w_xx = -w^2 (ln w)''; 4 w^2 - w_x^2 = w^2 (4 - (ln w)'^2)
        let cond1 = -w0 * w0 * lw_xx;
        let cond2 = w0 * w0 * (4.0 - lw_x * lw_x);

        prof.x.push(g.x(i));
        prof.r_normalized
            .push(normalized_scalar_from_jet(jet, fr.p));
        prof.r_geometric.push(r_geom);
        prof.ric_radial.push(pc.ric_radial);
        prof.ric_spherical.push(pc.ric_spherical);
        prof.sec_cond1.push(cond1);
        prof.sec_cond2.push(cond2);
        prof.rm_norm.push(pc.rm_norm);
    }
    Ok(prof)
}

pub fn scalar_curvature_normalized(state: &FlowState, p: f64) -> Result<Vec<(f64, f64)>> {
    let g = state.grid;
    let mut out = Vec::new();
    for i in 1..g.len.saturating_sub(1) {
        let (um, u0, up) = (state.u[i - 1], state.u[i], state.u[i + 1]);
        if um <= 1e-8 || u0 <= 1e-8 || up <= 1e-8 {
            continue;
        }
        let jet = LogJet::centered(um.ln(), u0.ln(), up.ln(), g.dx);
        out.push((g.x(i), normalized_scalar_from_jet(jet, p)));
    }
    Ok(out)
}

/// `(min cond1, min cond2)` over the evaluated nodes.
pub fn sectional_sign_check(
    state: &FlowState,
    n: u32,
    opts: &GeometryOptions,
) -> Result<(f64, f64)> {
    let prof = curvature_profile(state, n, opts)?;
    Ok((min_of(&prof.sec_cond1), min_of(&prof.sec_cond2)))
}

/// Cap region in polar coordinates around one end of the cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub orientation: Orientation,
    /// normalized position of `z = 0`
    pub x_origin: f64,
    /// `r = e^{(p-1) z / 2}`
    pub r: Vec<f64>,
    /// `u r^{-2/(p-1)}`
    pub u_hat: Vec<f64>,
}

/// Wave-frame coordinate of `x`.
fn wave_z(x: f64, x_origin: f64, orientation: Orientation) -> f64 {
    match orientation {
        Orientation::Left => x - x_origin,
        Orientation::Right => x_origin - x,
    }
}

/// Polar form of the half of `state` on the side of `orientation` from
/// `x_split`, in the frame `z = x - lambda tau + h` (mirrored for the right
/// wave).
pub fn to_polar(
    state: &FlowState,
    p: f64,
    orientation: Orientation,
    lambda: f64,
    h: f64,
    x_split: f64,
) -> PolarState {
    let x_origin = match orientation {
        Orientation::Left => lambda * state.tau - h,
        Orientation::Right => -(lambda * state.tau - h),
    };
    let mut r = Vec::new();
    let mut u_hat = Vec::new();
    for i in 0..state.grid.len {
        let x = state.grid.x(i);
        let keep = match orientation {
            Orientation::Left => x <= x_split,
            Orientation::Right => x >= x_split,
        };
        if !keep {
            continue;
        }
        let z = wave_z(x, x_origin, orientation);
        r.push((0.5 * (p - 1.0) * z).exp());
        u_hat.push(state.u[i] * (-z).exp());
    }
    PolarState {
        orientation,
        x_origin,
        r,
        u_hat,
    }
}

/// Inverse of [`to_polar`]: `(x, u)` pairs.
pub fn from_polar(ps: &PolarState, p: f64) -> Vec<(f64, f64)> {
    ps.r.iter()
        .zip(&ps.u_hat)
        .map(|(&r, &uh)| {
            let z = 2.0 * r.ln() / (p - 1.0);
            let x = match ps.orientation {
                Orientation::Left => ps.x_origin + z,
                Orientation::Right => ps.x_origin - z,
            };
            (x, uh * z.exp())
        })
        .collect()
}

/// Four-point Lagrange interpolation of grid samples.
fn interpolate(values: &[f64], grid: &Grid, x: f64) -> Result<f64> {
    let t = (x - grid.x_min) / grid.dx;
    if t < 1.0 || t > (grid.len - 3) as f64 {
        return Err(Error::DomainTooSmall {
            value: x,
            limit: grid.x_min,
        });
    }
    let j = (t.floor() as usize).clamp(1, grid.len - 3);
    let s = t - j as f64;
    let (a, b, c, d) = (values[j - 1], values[j], values[j + 1], values[j + 2]);
    Ok(
        -s * (s - 1.0) * (s - 2.0) / 6.0 * a + (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0 * b
            - (s + 1.0) * s * (s - 2.0) / 2.0 * c
            + (s + 1.0) * s * (s - 1.0) / 6.0 * d,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipCurvature {
    pub orientation: Orientation,
    /// normalized position where `u` crosses the mask level: radius `M`
    pub x_cap: f64,
    /// `r / M`
    pub y: Vec<f64>,
    pub k_radial: Vec<f64>,
    pub k_spherical: Vec<f64>,
    pub r_geometric: Vec<f64>,
    pub rm_norm: Vec<f64>,
    /// largest cylindrical-versus-polar sectional curvature difference on
    /// `M/2 <= r <= 2M`, relative to the largest curvature there
    pub overlap_rel_diff: f64,
    /// `u_hat` at the innermost radius over its ball average on `r <= M`
    pub mean_value_ratio: f64,
    /// `min` and `max` of `u_hat / u_hat(M)` on `r <= extent M`
    pub u_hat_min: f64,
    pub u_hat_max: f64,
}

/// Curvature of one cap from the polar form, with the overlap comparison.
pub fn tip_curvature(
    state: &FlowState,
    n: u32,
    orientation: Orientation,
    opts: &GeometryOptions,
) -> Result<TipCurvature> {
    let fr = Frame::new(n)?;
    let g = state.grid;
    let sb = fr.sqrt_beta();
    let p = fr.p;
    // work on the left cap; the right one is mirrored
    let mut ell: Vec<f64> = state.u.iter().map(|&u| u.ln()).collect();
    if orientation == Orientation::Right {
        ell.reverse();
    }
    let x_of = |i: usize| g.x_min + i as f64 * g.dx;
    let level = opts.mask.ln();
    let k = ell
        .iter()
        .position(|&l| l >= level)
        .filter(|&k| k > 0)
        .ok_or(Error::DomainTooSmall {
            value: f64::NAN,
            limit: opts.mask,
        })?;
    let frac = (level - ell[k - 1]) / (ell[k] - ell[k - 1]);
    let x_cap = x_of(k - 1) + frac * g.dx;
    let mirrored = Grid {
        x_min: g.x_min,
        dx: g.dx,
        len: g.len,
    };

    // psi(y) = ((p-1)/2) l(x(y)) - ln y, up to a constant
    let ell_at = |y: f64| interpolate(&ell, &mirrored, x_cap + sb * y.ln());
    let psi = |y: f64| -> Result<f64> { Ok(0.5 * (p - 1.0) * ell_at(y)? - y.ln()) };
    let dy = opts.polar_dy;
    let point = |y: f64| -> Result<(PointCurvature, f64)> {
        let (pm, p0, pp) = (psi(y - dy)?, psi(y)?, psi(y + dy)?);
        let py = (pp - pm) / (2.0 * dy);
        let pyy = (pp - 2.0 * p0 + pm) / (dy * dy);
        let l = ell_at(y)?;
        // e^{-2 psi} M^{-2} = u_raw^{1-p} y^2
        let e = ((1.0 - p) * (l - fr.log_amp)).exp() * y * y;
        let pc = PointCurvature::from_sectional(
            -e * (py / y + pyy),
            -e * (2.0 * py / y + py * py),
            fr.n,
        );
        Ok((pc, l))
    };

    let steps = (opts.polar_extent / dy).round() as usize;
    let mut tip = TipCurvature {
        orientation,
        x_cap: match orientation {
            Orientation::Left => x_cap,
            Orientation::Right => -x_cap,
        },
        y: Vec::with_capacity(steps),
        k_radial: Vec::with_capacity(steps),
        k_spherical: Vec::with_capacity(steps),
        r_geometric: Vec::with_capacity(steps),
        rm_norm: Vec::with_capacity(steps),
        overlap_rel_diff: 0.0,
        mean_value_ratio: 0.0,
        u_hat_min: f64::INFINITY,
        u_hat_max: f64::NEG_INFINITY,
    };
    let mut ball = 0.0;
    let mut ball_weight = 0.0;
    let mut inner = f64::NAN;
    for j in 2..steps {
        let y = j as f64 * dy;
        let (pc, l) = point(y)?;
        tip.y.push(y);
        tip.k_radial.push(pc.k_radial);
        tip.k_spherical.push(pc.k_spherical);
        tip.r_geometric.push(pc.scalar);
        tip.rm_norm.push(pc.rm_norm);
        // u_hat / u_hat(M) = e^{l - level} y^{-2/(p-1)}
        let uh = (l - level - (2.0 / (p - 1.0)) * y.ln()).exp();
        tip.u_hat_min = tip.u_hat_min.min(uh);
        tip.u_hat_max = tip.u_hat_max.max(uh);
        if j == 2 {
            inner = uh;
        }
        if y <= 1.0 {
            let wgt = y.powf(fr.n - 1.0);
            ball += uh * wgt;
            ball_weight += wgt;
        }
    }
    tip.mean_value_ratio = inner / (ball / ball_weight);

    // overlap annulus against the cylindrical evaluation at grid nodes
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 1..g.len - 1 {
        let x = x_of(i);
        let y = ((x - x_cap) / sb).exp();
        if !(0.5..=2.0).contains(&y) {
            continue;
        }
        let jet = LogJet::centered(ell[i - 1], ell[i], ell[i + 1], g.dx);
        let cyl = cylindrical_point(jet, &fr);
        let (pol, _) = point(y)?;
        worst = worst
            .max((cyl.k_radial - pol.k_radial).abs())
            .max((cyl.k_spherical - pol.k_spherical).abs());
        scale = scale.max(cyl.k_radial.abs()).max(cyl.k_spherical.abs());
    }
    tip.overlap_rel_diff = if scale > 0.0 { worst / scale } else { worst };
    Ok(tip)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmMonitor {
    pub taus: Vec<f64>,
    /// per-snapshot `sup |Rm|` over the cylindrical region and both caps
    pub sup: Vec<f64>,
    pub overall_sup: f64,
    pub mean: f64,
    /// fitted `d sup / d tau`
    pub slope: f64,
    /// smallest normalized scalar curvature seen anywhere
    pub min_r_normalized: f64,
    pub min_cond1: f64,
    pub min_cond2: f64,
    pub max_overlap_rel_diff: f64,
}

impl RmMonitor {
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["tau", "rm_sup"]);
        for (tau, s) in self.taus.iter().zip(&self.sup) {
            t.push_row(&[*tau, *s]);
        }
        t
    }
}

/// Curvature summary of one state: cylindrical region plus both caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCurvature {
    pub profile: CurvatureProfile,
    pub left_tip: TipCurvature,
    pub right_tip: TipCurvature,
    pub rm_sup: f64,
    pub min_r_normalized: f64,
}

pub fn state_curvature(
    state: &FlowState,
    n: u32,
    opts: &GeometryOptions,
) -> Result<StateCurvature> {
    let profile = curvature_profile(state, n, opts)?;
    let left_tip = tip_curvature(state, n, Orientation::Left, opts)?;
    let right_tip = tip_curvature(state, n, Orientation::Right, opts)?;
    let cal = affine_constants(n)?;
    let rm_sup = max_of(&profile.rm_norm)
        .max(max_of(&left_tip.rm_norm))
        .max(max_of(&right_tip.rm_norm));
    let tip_min = min_of(&left_tip.r_geometric).min(min_of(&right_tip.r_geometric));
    let min_r_normalized = min_of(&profile.r_normalized).min(cal.to_normalized(tip_min));
    Ok(StateCurvature {
        profile,
        left_tip,
        right_tip,
        rm_sup,
        min_r_normalized,
    })
}

/// `sup |Rm|` per state over a sequence of states, with its trend.
pub fn riemann_norm_monitor(
    states: &[FlowState],
    n: u32,
    opts: &GeometryOptions,
) -> Result<RmMonitor> {
    if states.len() < 2 {
        return Err(Error::FitWindowTooSmall {
            found: states.len(),
            needed: 2,
        });
    }
    let mut mon = RmMonitor {
        taus: Vec::with_capacity(states.len()),
        sup: Vec::with_capacity(states.len()),
        overall_sup: 0.0,
        mean: 0.0,
        slope: 0.0,
        min_r_normalized: f64::INFINITY,
        min_cond1: f64::INFINITY,
        min_cond2: f64::INFINITY,
        max_overlap_rel_diff: 0.0,
    };
    for s in states {
        let c = state_curvature(s, n, opts)?;
        mon.taus.push(s.tau);
        mon.sup.push(c.rm_sup);
        mon.min_r_normalized = mon.min_r_normalized.min(c.min_r_normalized);
        mon.min_cond1 = mon.min_cond1.min(min_of(&c.profile.sec_cond1));
        mon.min_cond2 = mon.min_cond2.min(min_of(&c.profile.sec_cond2));
        mon.max_overlap_rel_diff = mon
            .max_overlap_rel_diff
            .max(c.left_tip.overlap_rel_diff)
            .max(c.right_tip.overlap_rel_diff);
    }
    mon.overall_sup = max_of(&mon.sup);
    mon.mean = mon.sup.iter().sum::<f64>() / mon.sup.len() as f64;
    mon.slope = linear_fit(&mon.taus, &mon.sup)?.slope;
    Ok(mon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_calibration_matches_closed_form() {
        for n in [3, 4, 6] {
            let a = calibrate(n).unwrap();
            let b = affine_constants(n).unwrap();
            assert!((a.scale / b.scale - 1.0).abs() < 1e-12, "n={n}");
            assert!((a.offset / b.offset - 1.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn cylinder_curvature() {
        let g = Grid::symmetric(2.0, 0.1).unwrap();
        let s = FlowState::from_fn(0.0, g, |_| 1.0).unwrap();
        let prof = curvature_profile(&s, 3, &GeometryOptions::default()).unwrap();
        let map = NormalizationMap::for_dimension(3).unwrap();
        // u_raw = 1/A, so the metric is the unit cylinder scaled by A^{-(p-1)}
        let scale = map.amplitude().powf(map.p - 1.0);
        for i in 0..prof.x.len() {
            assert!((prof.r_normalized[i] - 1.0).abs() < 1e-14);
            assert!(prof.ric_radial[i].abs() < 1e-14);
            assert!((prof.ric_spherical[i] - scale).abs() < 1e-12);
            assert!((prof.r_geometric[i] - 2.0 * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_round_trip() {
        let g = Grid::symmetric(20.0, 0.05).unwrap();
        let s = FlowState::from_fn(-3.0, g, |x| 1.0 / (1.0 + (-x).exp() + x.exp())).unwrap();
        for o in [Orientation::Left, Orientation::Right] {
            let ps = to_polar(&s, 5.0, o, 1.2, 0.4, 0.0);
            for (x, u) in from_polar(&ps, 5.0) {
                let i = g.nearest(x);
                assert!((g.x(i) - x).abs() < 1e-9);
                assert!((u - s.u[i]).abs() <= 1e-12 * s.u[i]);
            }
        }
    }
}
