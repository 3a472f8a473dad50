use yamabe_core::geometry::{
    affine_constants, calibrate, curvature_profile, normalized_scalar_from_derivatives,
    scalar_curvature_normalized, state_curvature, GeometryOptions,
};
use yamabe_core::grid::Grid;
use yamabe_core::model::NormalizationMap;
use yamabe_core::pde::FlowState;
use yamabe_core::soliton::{barenblatt, barenblatt_normalizing_c, steady_state};

const P: f64 = 5.0;

/// `R_norm` of the `lambda = 1` wave in closed form: `1 + (p-1)(1 - v^{p-1})`.
fn barenblatt_scalar(x: f64) -> f64 {
    let v = barenblatt(barenblatt_normalizing_c(P), P, x).unwrap();
    1.0 + (P - 1.0) * (1.0 - v.powf(P - 1.0))
}

fn barenblatt_state(half: f64, dx: f64) -> FlowState {
    let c = barenblatt_normalizing_c(P);
    FlowState::from_fn(0.0, Grid::symmetric(half, dx).unwrap(), |x| {
        barenblatt(c, P, x).unwrap()
    })
    .unwrap()
}

#[test]
fn barenblatt_scalar_curvature_from_exact_derivatives() {
    let c = barenblatt_normalizing_c(P);
    // u^{1-p} amplifies rounding by up to 1e5 on x >= -2
    for k in -20..=80 {
        let x = 0.1 * f64::from(k);
        let v = barenblatt(c, P, x).unwrap();
        let s = v.powf(P - 1.0);
        // v' = v (1 - v^{p-1}), v'' = v (1 - v^{p-1})(1 - p v^{p-1})
        let v_xx = v * (1.0 - s) * (1.0 - P * s);
        let r = normalized_scalar_from_derivatives(v, v_xx, P);
        assert!((r - barenblatt_scalar(x)).abs() < 1e-8, "x {x}: {r}");
    }
}

#[test]
fn discrete_scalar_curvature_is_second_order() {
    let err = |dx: f64| {
        scalar_curvature_normalized(&barenblatt_state(10.0, dx), P)
            .unwrap()
            .into_iter()
            .filter(|(x, _)| (-2.0..=8.0).contains(x))
            .map(|(x, r)| (r - barenblatt_scalar(x)).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(0.02), err(0.01));
    assert!(coarse < 1e-2, "{coarse:e}");
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "{ratio}");
}

#[test]
fn constant_states_are_rescaled_cylinders() {
    let map = NormalizationMap::for_dimension(3).unwrap();
    let grid = Grid::symmetric(1.0, 0.1).unwrap();
    for c in [1.0, 0.5, 2.0] {
        let s = FlowState::from_fn(0.0, grid, |_| c).unwrap();
        let prof = curvature_profile(&s, 3, &GeometryOptions::default()).unwrap();
        let u_raw: f64 = c / map.amplitude();
        for k in 0..prof.x.len() {
            assert!((prof.r_geometric[k] - 2.0 * u_raw.powf(1.0 - P)).abs() < 1e-12);
            assert!(prof.ric_radial[k].abs() < 1e-12);
            assert!((prof.ric_spherical[k] - u_raw.powf(1.0 - P)).abs() < 1e-12);
        }
        if c == 1.0 {
            assert!(prof.r_normalized.iter().all(|r| (r - 1.0).abs() < 1e-14));
        }
    }
}

#[test]
fn affine_relation_holds_off_the_calibration_states() {
    let fitted = calibrate(3).unwrap();
    let closed = affine_constants(3).unwrap();
    assert!((fitted.scale - closed.scale).abs() < 1e-9 * closed.scale);
    assert!((fitted.offset - closed.offset).abs() < 1e-9 * closed.offset.abs());
    let prof = curvature_profile(
        &barenblatt_state(10.0, 0.02),
        3,
        &GeometryOptions::default(),
    )
    .unwrap();
    for k in 0..prof.x.len() {
        let predicted = closed.scale * prof.r_normalized[k] + closed.offset;
        assert!((prof.r_geometric[k] - predicted).abs() < 1e-6 * (1.0 + predicted.abs()));
    }
}

#[test]
fn steady_state_is_a_round_sphere() {
    let dx = 0.01;
    let grid = Grid::symmetric(15.0, dx).unwrap();
    let s = FlowState::from_fn(0.0, grid, |x| steady_state(1.0, 3, x).unwrap()).unwrap();
    let opts = GeometryOptions::default();
    let sc = state_curvature(&s, 3, &opts).unwrap();
    let prof = &sc.profile;
    let mean = prof.r_geometric.iter().sum::<f64>() / prof.r_geometric.len() as f64;
    for k in 0..prof.x.len() {
        assert!((prof.r_geometric[k] / mean - 1.0).abs() < 1e-3);
        assert!((prof.r_normalized[k] - 1.0).abs() < 1e-3);
        let (a, b) = (prof.ric_radial[k], prof.ric_spherical[k]);
        assert!((a - b).abs() < 1e-3 * b);
        assert!(prof.sec_cond1[k] >= -10.0 * dx * dx && prof.sec_cond2[k] >= -10.0 * dx * dx);
    }
    assert!(prof.trace_defect(3) < 1e-10);
    // sectional curvature K = R/6 in dimension 3, |Rm| = sqrt(3) K
    let rm = 3f64.sqrt() * mean / 6.0;
    assert!((sc.rm_sup / rm - 1.0).abs() < 1e-2, "{} vs {rm}", sc.rm_sup);
    for tip in [&sc.left_tip, &sc.right_tip] {
        assert!(tip.overlap_rel_diff < 1e-2, "{tip:?}");
        for r in &tip.r_geometric {
            assert!((r / mean - 1.0).abs() < 1e-2);
        }
    }
}
