mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use nowcast_core::lf_model::{self, HyperParams, ModelSpec};
use nowcast_core::mcsim::{collapsed_data, replication_seed, simulate_dgp, DgpSpec, Regime, TrendModel, START};
use nowcast_core::mle::{
    default_init, fit, fit_model, lr_from_logliks, lr_test_from_fit, maximize, BfgsOptions, LfModel, ParamModel,
    Transform,
};
use proptest::prelude::*;

fn trend_data(rho: f64, seed: u64) -> (TrendModel, DMatrix<f64>) {
    let d = simulate_dgp(&DgpSpec::new(rho, Regime::HomoskedasticDense, seed)).unwrap();
    let y: Vec<f64> = d.y.iter().copied().collect();
    let (s, data, _, _) = collapsed_data(&y, &d.x).unwrap();
    (TrendModel::with_factor(s), data)
}

#[test]
fn bfgs_finds_the_maximum_of_a_concave_quadratic() {
    let f = |x: &[f64]| Some(-(x[0] - 1.0).powi(2) - 10.0 * (x[1] + 2.0).powi(2) - (x[0] - 1.0) * (x[1] + 2.0));
    let r = maximize(f, &[5.0, 5.0], &BfgsOptions::default()).unwrap();
    assert!(r.converged);
    assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-4);
    assert_abs_diff_eq!(r.x[1], -2.0, epsilon = 1e-4);
}

#[test]
fn bfgs_solves_rosenbrock_and_respects_infeasible_regions() {
    let f = |x: &[f64]| {
        if x[0] < -1.5 {
            return None;
        }
        Some(-(1.0 - x[0]).powi(2) - 100.0 * (x[1] - x[0] * x[0]).powi(2))
    };
    let r = maximize(f, &[-1.2, 1.0], &BfgsOptions { rel_tol: 1e-14, ..BfgsOptions::default() }).unwrap();
    assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-3);
    assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 2e-3);
    assert!(maximize(|_: &[f64]| None, &[0.0], &BfgsOptions::default()).is_err());
}

#[test]
fn iteration_cap_returns_an_unconverged_result() {
    let f = |x: &[f64]| Some(-(1.0 - x[0]).powi(2) - 100.0 * (x[1] - x[0] * x[0]).powi(2));
    let r = maximize(f, &[-1.2, 1.0], &BfgsOptions { max_iter: 3, ..BfgsOptions::default() }).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations, 3);
}

#[test]
fn fitting_never_lowers_the_likelihood() {
    let (model, data) = trend_data(0.5, 11);
    let m0 = model.build(&START).unwrap();
    let l0 = nowcast_core::ssm::filter_with(&m0, &data, nowcast_core::ssm::FilterOptions::loglik_only()).unwrap().loglik;
    let f = fit_model(&model, &data, &START, &[None, None, None], &BfgsOptions::default()).unwrap();
    assert!(f.loglik >= l0);
    assert!(f.converged);
    assert!(f.values[0] > 0.0 && f.values[1] > 0.0 && f.values[2].abs() < 1.0);
}

#[test]
fn correlation_is_recovered() {
    let mut hits = 0;
    for j in 0..100 {
        let (model, data) = trend_data(0.8, replication_seed(21, j));
        let f = fit_model(&model, &data, &START, &[None, None, None], &BfgsOptions::default()).unwrap();
        if (f.values[2] - 0.8).abs() <= 0.15 {
            hits += 1;
        }
    }
    assert!(hits >= 80, "{hits}/100");
}

#[test]
fn estimates_do_not_depend_on_the_starting_point() {
    let mut close = 0;
    for j in 0..20 {
        let (model, data) = trend_data(0.6, replication_seed(22, j));
        let opts = BfgsOptions::default();
        let a = fit_model(&model, &data, &START, &[None, None, None], &opts).unwrap();
        let b = fit_model(&model, &data, &[2.0, 0.1, -0.5], &[None, None, None], &opts).unwrap();
        if (a.loglik - b.loglik).abs() < 1e-4 {
            close += 1;
        }
    }
    assert!(close >= 18, "{close}/20");
}

#[test]
fn vanishing_seasonal_disturbance_goes_to_the_boundary() {
    let t = 120;
    let c = DMatrix::from_element(t, 5, 1.0);
    let truth = HyperParams { sigma_omega_y: 0.0, sigma_r_y: 0.2, ..HyperParams::default() };
    let spec = ModelSpec::baseline();
    let model = lf_model::build(&spec, &truth, &c).unwrap();
    let lf = LfModel { spec: spec.clone(), c, all_corr: false };
    let init = HyperParams { sigma_omega_y: 0.1, ..truth.clone() };
    let mut at_bound = 0;
    let mut small = 0;
    for seed in 0..10 {
        let y = common::simulate(&model, t, &mut common::rng(230 + seed));
        let res = fit(&lf, &y, &init, &BfgsOptions::default()).unwrap();
        if res.params.sigma_omega_y < 1e-3 {
            at_bound += 1;
            assert!(res.warnings.iter().any(|w| w.contains("sigma_omega_y")), "{:?}", res.warnings);
        }
        if res.params.sigma_omega_y < 0.02 {
            small += 1;
        }
    }
    assert!(at_bound >= 4, "{at_bound}/10");
    assert!(small >= 9, "{small}/10");
}

#[test]
fn default_init_is_feasible() {
    let t = 60;
    let c = DMatrix::from_element(t, 5, 1.0);
    let spec = ModelSpec::baseline();
    let model = lf_model::build(&spec, &HyperParams::default(), &c).unwrap();
    let y = common::simulate(&model, t, &mut common::rng(24));
    let init = default_init(&spec, &y);
    assert!(init.sigma_r_y > 0.0 && init.sigma_omega_y > 0.0);
    assert!(lf_model::build(&spec, &init, &c).is_ok());
}

#[test]
fn lr_of_identical_fits_is_zero() {
    let r = lr_from_logliks("rho=0", -100.0, -100.0, 1).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert_eq!(r.p_value, 1.0);
    // small optimizer noise is clipped
    let r = lr_from_logliks("rho=0", -100.0 + 5e-5, -100.0, 1).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert!(matches!(lr_from_logliks("rho=0", -99.0, -100.0, 1), Err(nowcast_core::Error::Optimization(_))));
    let r = lr_from_logliks("rho=0", -101.92, -100.0, 1).unwrap();
    assert_abs_diff_eq!(r.p_value, 0.05, epsilon = 1e-3);
}

#[test]
fn lr_test_has_power_against_strong_correlation() {
    let mut rejections = 0;
    let opts = BfgsOptions::default();
    for j in 0..200 {
        let (model, data) = trend_data(0.9, replication_seed(25, j));
        let unres = fit_model(&model, &data, &START, &[None, None, None], &opts).unwrap();
        let (t, restricted) = lr_test_from_fit(&model, &data, &unres, &[2], "rho=0", &opts).unwrap();
        assert_eq!(restricted.values[2], 0.0);
        assert_eq!(t.df, 1);
        if t.p_value < 0.05 {
            rejections += 1;
        }
    }
    assert!(rejections >= 180, "{rejections}/200");
}

#[test]
fn empty_restriction_is_rejected() {
    let (model, data) = trend_data(0.0, 26);
    let unres = fit_model(&model, &data, &START, &[None, None, None], &BfgsOptions::default()).unwrap();
    assert!(lr_test_from_fit(&model, &data, &unres, &[], "none", &BfgsOptions::default()).is_err());
}

proptest! {
    #[test]
    fn transforms_round_trip(x in 1e-6f64..1e6, r in -0.999f64..0.999) {
        let back = Transform::Log.from_free(Transform::Log.to_free(x));
        prop_assert!((back - x).abs() <= 1e-12 * x);
        let back = Transform::Atanh.from_free(Transform::Atanh.to_free(r));
        prop_assert!((back - r).abs() <= 1e-12);
        prop_assert!(Transform::Atanh.from_free(1e6).abs() <= 1.0);
        prop_assert!(Transform::Log.from_free(-1e6) > 0.0);
    }
}
