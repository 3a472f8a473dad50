use proptest::prelude::*;

use yamabe_core::ancient::{supersolution_eval, SupersolutionSpec};
use yamabe_core::config::ExperimentConfig;
use yamabe_core::io::CsvTable;
use yamabe_core::model::{
    critical_speed, gamma_large_of_lambda, gamma_of_lambda, lambda_of_gamma, merge_rate_d,
    ModelParams, NormalizationMap,
};
use yamabe_core::numerics::{hermite5, log_linear_fit, thomas_solve, trapezoid};
use yamabe_core::soliton::ShootOptions;

proptest! {
    #[test]
    fn small_root_solves_the_quadratic(p in 1.05..9.0f64, e in 0.0..5.0f64) {
        let lambda = critical_speed(p) + e;
        let g = gamma_of_lambda(lambda, p).unwrap();
        let scale = 1.0 + lambda * p * g;
        prop_assert!((g * g - lambda * p * g + (p - 1.0)).abs() <= 1e-12 * scale);
        prop_assert!((lambda_of_gamma(g, p).unwrap() - lambda).abs() <= 1e-10 * lambda);
    }

    #[test]
    fn roots_are_ordered_and_multiply_to_p_minus_one(p in 1.05..9.0f64, e in 0.0..5.0f64) {
        let lambda = critical_speed(p) + e;
        let g = gamma_of_lambda(lambda, p).unwrap();
        let big = gamma_large_of_lambda(lambda, p).unwrap();
        prop_assert!(g > 0.0 && g <= big * (1.0 + 1e-12));
        prop_assert!((g * big - (p - 1.0)).abs() <= 1e-10 * (p - 1.0));
    }

    #[test]
    fn faster_waves_decay_slower(p in 1.05..9.0f64, e in 0.0..4.0f64, de in 0.01..1.0f64) {
        let l = critical_speed(p) + e;
        prop_assert!(gamma_of_lambda(l + de, p).unwrap() < gamma_of_lambda(l, p).unwrap());
    }

    #[test]
    fn merge_rate_exceeds_the_mass_rate(n in 3u32..12, e1 in 0.0..4.0f64, e2 in 0.0..4.0f64) {
        let params = ModelParams::new(n, 1.0 + e1, 1.0 + e2, 0.0, 0.0).unwrap();
        let (_, _, d) = params.decay().unwrap();
        prop_assert!(d > (params.p - 1.0) / params.p);
        let (g1, g2, _) = params.decay().unwrap();
        prop_assert_eq!(merge_rate_d(g1, g2, params.p).unwrap(), merge_rate_d(g2, g1, params.p).unwrap());
    }

    #[test]
    fn normalization_round_trips(n in 3u32..20, x in -100.0..100.0f64, t in -100.0..100.0f64) {
        let map = NormalizationMap::for_dimension(n).unwrap();
        let (xn, tn) = map.normalize(x, t);
        let (xr, tr) = map.denormalize(xn, tn);
        prop_assert!((xr - x).abs() <= 1e-12 * (1.0 + x.abs()));
        prop_assert!((tr - t).abs() <= 1e-12 * (1.0 + t.abs()));
    }

    #[test]
    fn exponential_fit_is_exact(rate in -2.0..2.0f64, c in 0.01..100.0f64) {
        let t: Vec<f64> = (0..40).map(|k| -30.0 + 0.5 * f64::from(k)).collect();
        let y: Vec<f64> = t.iter().map(|t| c * (rate * t).exp()).collect();
        let fit = log_linear_fit(&t, &y).unwrap();
        prop_assert!((fit.slope - rate).abs() < 1e-10);
        prop_assert!((fit.intercept.exp() / c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn thomas_inverts_diagonally_dominant_systems(
        rows in prop::collection::vec((-1.0..1.0f64, 2.5..4.0f64, -1.0..1.0f64, -5.0..5.0f64), 2..40)
    ) {
        let n = rows.len();
        let sub: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let diag: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let sup: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let mut x = b.clone();
        thomas_solve(&sub, &diag, &sup, &mut x, &mut Vec::new());
        for i in 0..n {
            let mut ax = diag[i] * x[i];
            if i > 0 { ax += sub[i] * x[i - 1]; }
            if i + 1 < n { ax += sup[i] * x[i + 1]; }
            prop_assert!((ax - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn hermite_matches_endpoint_data(
        l in prop::array::uniform3(-3.0..3.0f64), r in prop::array::uniform3(-3.0..3.0f64), h in 0.01..1.0f64
    ) {
        let (v0, d0) = hermite5(0.0, h, l, r);
        let (v1, d1) = hermite5(1.0, h, l, r);
        prop_assert!((v0 - l[0]).abs() < 1e-12 && (d0 - l[1]).abs() < 1e-10);
        prop_assert!((v1 - r[0]).abs() < 1e-12 && (d1 - r[1]).abs() < 1e-10);
    }

    #[test]
    fn trapezoid_is_exact_on_lines(a in -5.0..5.0f64, b in -5.0..5.0f64, n in 2usize..200) {
        let dx = 1.0 / (n - 1) as f64;
        let v: Vec<f64> = (0..n).map(|i| a + b * i as f64 * dx).collect();
        prop_assert!((trapezoid(&v, dx) - (a + 0.5 * b)).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trips_exactly(rows in prop::collection::vec(prop::array::uniform3(-1e300..1e300f64), 0..20)) {
        let mut t = CsvTable::new(&["tau", "x", "u"]);
        for r in &rows { t.push_row(r); }
        let back = CsvTable::parse(&t.render().unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn config_text_is_canonical(
        lambda in 1.0..3.0f64, dx in 0.001..0.1f64, workers in 1usize..16, m in 1.0..50.0f64
    ) {
        let mut cfg = ExperimentConfig { lambda, ..ExperimentConfig::default() };
        cfg.grid.dx = dx;
        cfg.workers = workers;
        cfg.m_list = vec![m];
        cfg.time.tau_end = -0.5 * m;
        let text = cfg.to_canonical().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_canonical().unwrap(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn supersolution_is_the_lower_branch(
        x in -30.0..30.0f64, tau in -30.0..-5.0f64, l2 in 1.0..3.0f64
    ) {
        let params = ModelParams::new(3, 1.2, l2, 0.0, 0.0).unwrap();
        let spec = SupersolutionSpec::build(params, &ShootOptions::default()).unwrap();
        let v = supersolution_eval(&spec, x, tau);
        let a = spec.left_point(x, tau).v;
        let b = spec.right_point(x, tau).v;
        prop_assert_eq!(v, a.min(b));
        prop_assert!(v > 0.0 && v < 1.0);
    }
}
