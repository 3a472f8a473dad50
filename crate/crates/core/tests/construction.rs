use yamabe_core::ancient::{
    build_initial_data, construction_grid, distinguish_functional, fit_merge_constant,
    intersection_numeric, run_um, supersolution_mass_residual, Formulation, Quadrature, RunOptions,
    SupersolutionSpec,
};
use yamabe_core::model::ModelParams;
use yamabe_core::pde::SolverConfig;
use yamabe_core::soliton::ShootOptions;

fn spec(l1: f64, l2: f64) -> SupersolutionSpec {
    let params = ModelParams::new(3, l1, l2, 0.0, 0.0).unwrap();
    SupersolutionSpec::build(params, &ShootOptions::default()).unwrap()
}

#[test]
fn crossing_root_is_resolved() {
    let s = spec(1.2, 1.5);
    for tau in [-40.0, -25.0, -10.0] {
        let r = intersection_numeric(&s, tau).unwrap();
        assert!(r.root_residual < 1e-12, "tau {tau}: {:e}", r.root_residual);
        assert!((r.x_numeric - r.x_asymptotic).abs() < 0.05, "{r:?}");
    }
}

#[test]
fn merged_profile_mass_identity_carries_the_kink_term() {
    let s = spec(1.2, 1.2);
    let c = fit_merge_constant(&s, 30.0).unwrap();
    let quad = Quadrature::default();
    // below tau = -20 the correction drops under the profile-accuracy floor
    for tau in [-20.0, -15.0] {
        let r = supersolution_mass_residual(&s, tau, 1e-2, c, &quad).unwrap();
        assert!(
            r.residual.abs() < 0.1 * r.correction,
            "tau {tau}: residual {:e} vs correction {:e}",
            r.residual,
            r.correction
        );
        let half = supersolution_mass_residual(&s, tau, 5e-3, c, &quad).unwrap();
        assert!((half.residual - r.residual).abs() < 1e-3 * r.correction);
    }
    // far apart waves: the time derivative is the reaction integral alone
    let far = supersolution_mass_residual(&s, -60.0, 1e-2, c, &quad).unwrap();
    assert!((far.lhs - (far.rhs - far.correction)).abs() < 1e-9 * far.lhs.abs());
}

#[test]
fn mass_gap_is_the_total_shift() {
    let base = spec(1.2, 1.2);
    let quad = Quadrature::default();
    for (h, hp) in [(1.0, 1.0), (0.5, 0.0), (0.5, 0.25), (-0.75, -0.25)] {
        let shifted = base.with_shifts(h, hp).unwrap();
        let gap = distinguish_functional(&shifted, &base, -30.0, &quad).unwrap();
        let total: f64 = (h + hp).abs();
        assert!((gap - total).abs() < 1e-3 * total, "({h}, {hp}): {gap}");
        assert!(gap >= 0.5 * total);
    }
    let translate = base.with_shifts(1.0, -1.0).unwrap();
    assert!(distinguish_functional(&translate, &base, -30.0, &quad).unwrap() < 1e-9);
}

#[test]
fn initial_data_is_even_and_capped_at_the_crossing() {
    let s = spec(1.2, 1.2);
    let m = 12.0;
    let grid = construction_grid(&s, m, 0.02).unwrap();
    let u0 = build_initial_data(&s, m, grid).unwrap();
    assert!(u0.u[0] < 1e-8 && u0.u[grid.len - 1] < 1e-8);
    for i in 0..grid.len {
        let (a, b) = (u0.u[i], u0.u[grid.len - 1 - i]);
        assert!((a - b).abs() <= 1e-12 * a.max(b));
    }
    let top = intersection_numeric(&s, -m).unwrap().value_at_intersection;
    let peak = u0.max_u();
    assert!(peak <= top && top - peak < 1e-3, "{peak} vs {top}");
}

#[test]
fn short_run_keeps_the_barrier_and_decreases() {
    let s = spec(1.2, 1.2);
    let (m, dx) = (8.0, 0.02);
    let grid = construction_grid(&s, m, dx).unwrap();
    let run = run_um(
        &s,
        m,
        -3.0,
        &SolverConfig::default(),
        grid,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(run.diagnostics[0].q_m, 0.0);
    for d in &run.diagnostics {
        assert!(d.q_m >= -5.0 * dx * dx);
        assert!(d.barrier_violation <= 5.0 * dx * dx);
        assert!(d.max_u < 1.0);
    }
    assert!(run.monotonicity_violation <= 1e-8);
    assert!(run.diagnostics.last().unwrap().q_m > 0.0);
}

#[test]
fn formulations_agree() {
    let s = spec(1.2, 1.2);
    // the difference is the first-order time error, which the two
    // formulations distribute differently
    let grid = construction_grid(&s, 5.0, 0.02).unwrap();
    let gap = |dtau: f64| {
        let cfg = SolverConfig {
            dtau,
            ..SolverConfig::default()
        };
        let mut opts = RunOptions::default();
        let defect = run_um(&s, 5.0, -3.0, &cfg, grid, &opts).unwrap();
        opts.formulation = Formulation::Direct;
        let direct = run_um(&s, 5.0, -3.0, &cfg, grid, &opts).unwrap();
        let (a, b) = (
            defect.snapshots.last().unwrap(),
            direct.snapshots.last().unwrap(),
        );
        assert!((a.tau - b.tau).abs() < 1e-9);
        a.u.iter()
            .zip(&b.u)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (gap(2e-3), gap(1e-3));
    assert!(
        fine < 1e-3 && (1.5..2.5).contains(&(coarse / fine)),
        "{coarse:e} -> {fine:e}"
    );
}
