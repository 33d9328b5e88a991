mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use nowcast_core::ssm::{
    collapse_rows, filter, filter_with, loglik_at, standardize, DiffuseMethod, FilterOptions, Initialization,
    Measurement, StateInit, StateSpaceModel,
};
use nowcast_core::{panel::Panel, Frequency};
use proptest::prelude::*;
use rand::Rng;

fn rw_plus_noise(q: f64, h: f64) -> StateSpaceModel<f64> {
    StateSpaceModel::new(
        Measurement::constant(DMatrix::from_element(1, 1, 1.0)),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, q),
        DVector::from_element(1, h),
        Initialization::all_diffuse(1),
    )
    .unwrap()
}

fn panel(y: DMatrix<f64>) -> Panel<f64> {
    Panel::from_matrix(y, Frequency::Monthly)
}

#[test]
fn noiseless_local_level_stays_at_initial_value() {
    let mut init = Initialization::from_tags(&[StateInit::Exact(0.0)]);
    init.a1[0] = 5.0;
    let model = StateSpaceModel::new(
        Measurement::constant(DMatrix::from_element(1, 1, 1.0)),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
        DVector::zeros(1),
        init,
    )
    .unwrap();
    let y = DMatrix::from_element(6, 1, f64::NAN);
    let out = filter(&model, &panel(y)).unwrap();
    for a in &out.filtered_state {
        assert_eq!(a[0], 5.0);
    }
    assert_eq!(out.loglik, 0.0);
}

#[test]
fn random_walk_plus_noise_matches_dense_oracle() {
    let model = rw_plus_noise(1.0, 1.0);
    let mut rng = common::rng(11);
    let y = common::simulate(&model, 10, &mut rng);
    let ll = loglik_at(&model, &panel(y.clone())).unwrap();
    let oracle = common::dense_loglik(&model, &y).unwrap();
    assert_abs_diff_eq!(ll, oracle, epsilon = 1e-8);
}

#[test]
fn missing_observation_is_pure_prediction() {
    let model = rw_plus_noise(1.0, 1.0);
    let mut rng = common::rng(12);
    let mut y = common::simulate(&model, 10, &mut rng);
    y[(4, 0)] = f64::NAN;
    let out = filter(&model, &panel(y.clone())).unwrap();
    assert_eq!(out.filtered_state[4], out.predicted_state[4]);
    assert_eq!(out.filtered_cov[4], out.predicted_cov[4]);
    assert!(out.innovations[4][0].is_nan());
    assert_abs_diff_eq!(out.loglik, common::dense_loglik(&model, &y).unwrap(), epsilon = 1e-8);
}

#[test]
fn all_missing_reduces_to_prediction() {
    let mut rng = common::rng(3);
    let model = common::random_model(&mut rng, 3, 2, 2, None);
    let y = DMatrix::from_element(8, 2, f64::NAN);
    let out = filter(&model, &panel(y)).unwrap();
    for t in 0..8 {
        assert_eq!(out.filtered_state[t], out.predicted_state[t]);
    }
    assert_eq!(out.loglik, 0.0);
    assert_eq!(out.n_loglik_terms, 0);
}

#[test]
fn standardized_innovation_scalar_and_diagonal_cases() {
    let v = DVector::from_vec(vec![2.0]);
    let f = DMatrix::from_element(1, 1, 4.0);
    let z = standardize(&v, &f, &[true], 0).unwrap();
    assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-10);

    let v = DVector::from_vec(vec![1.0, 3.0]);
    let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0]));
    let z = standardize(&v, &f, &[true, true], 0).unwrap();
    assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(z[1], 1.0, epsilon = 1e-10);
}

#[test]
fn singular_innovation_covariance_is_reported() {
    let v = DVector::from_vec(vec![1.0, 1.0]);
    let f = DMatrix::from_element(2, 2, 1.0);
    let f = f - DMatrix::identity(2, 2) * 0.5 + DMatrix::from_vec(2, 2, vec![0.0, 0.0, 0.0, -2.0]);
    assert!(standardize(&v, &f, &[true, true], 7).is_err());
}

#[test]
fn standardized_innovations_have_identity_covariance() {
    let mut rng = common::rng(99);
    let model = common::random_model(&mut rng, 3, 2, 2, None);
    let y = common::simulate(&model, 500, &mut rng);
    let out = filter(&model, &panel(y)).unwrap();
    let z = out.standardized_innovations().unwrap();
    let n = z.len() as f64;
    let mut c = DMatrix::<f64>::zeros(2, 2);
    for v in &z {
        c += v * v.transpose();
    }
    c /= n;
    let err = (c - DMatrix::identity(2, 2)).norm();
    assert!(err < 0.15, "frobenius error {err}");
}

#[test]
fn loglik_is_invariant_to_column_permutation() {
    let mut rng = common::rng(5);
    let model = common::random_model(&mut rng, 3, 3, 2, None);
    let y = common::simulate(&model, 12, &mut rng);
    let perm = [2usize, 0, 1];
    let z = model.z_at(0);
    let zp = DMatrix::from_fn(3, 3, |i, j| z[(perm[i], j)]);
    let hp = DVector::from_fn(3, |i, _| model.obs_var()[perm[i]]);
    let yp = DMatrix::from_fn(12, 3, |t, i| y[(t, perm[i])]);
    let permuted = model.with_measurement(Measurement::constant(zp), hp).unwrap();
    let a = loglik_at(&model, &panel(y)).unwrap();
    let b = loglik_at(&permuted, &panel(yp)).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-8);
}

#[test]
fn inflated_measurement_noise_lowers_loglik() {
    let mut rng = common::rng(8);
    let model = common::random_model(&mut rng, 2, 2, 2, None);
    let small = model.with_measurement(model.measurement().clone(), model.obs_var() * 0.01).unwrap();
    let y = common::simulate(&small, 60, &mut rng);
    let big = model.with_measurement(model.measurement().clone(), model.obs_var() * 1.0).unwrap();
    assert!(loglik_at(&small, &panel(y.clone())).unwrap() > loglik_at(&big, &panel(y)).unwrap());
}

#[test]
fn dimension_mismatch_is_a_configuration_error() {
    let model = rw_plus_noise(1.0, 1.0);
    let y = DMatrix::zeros(5, 2);
    assert!(matches!(
        filter_with(&model, &y, FilterOptions::default()),
        Err(nowcast_core::Error::Config(_))
    ));
    let bad = StateSpaceModel::new(
        Measurement::constant(DMatrix::zeros(1, 2)),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]),
        DVector::zeros(1),
        Initialization::all_diffuse(2),
    );
    assert!(bad.is_err(), "indefinite Q must be rejected");
}

#[test]
fn zero_innovation_variance_is_degenerate() {
    let model = StateSpaceModel::new(
        Measurement::constant(DMatrix::from_element(1, 1, 1.0)),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
        DVector::zeros(1),
        Initialization::from_tags(&[StateInit::Exact(0.0)]),
    )
    .unwrap();
    let y = DMatrix::from_element(3, 1, 1.0);
    match filter(&model, &panel(y)) {
        Err(nowcast_core::Error::FilterDegenerate { t, .. }) => assert_eq!(t, 0),
        other => panic!("expected degeneracy, got {other:?}"),
    }
}

#[test]
fn large_kappa_approaches_exact_diffuse() {
    let model = rw_plus_noise(0.5, 1.0);
    let mut rng = common::rng(21);
    let y = common::simulate(&model, 30, &mut rng);
    let exact = filter(&model, &panel(y.clone())).unwrap();
    let approx = filter_with(&model, &y, FilterOptions { diffuse: DiffuseMethod::LargeKappa(1e7), store: true }).unwrap();
    for t in exact.d_diffuse..30 {
        assert_abs_diff_eq!(exact.filtered_state[t][0], approx.filtered_state[t][0], epsilon = 1e-6);
        assert_abs_diff_eq!(exact.filtered_cov[t][(0, 0)], approx.filtered_cov[t][(0, 0)], epsilon = 1e-6);
    }
}

#[test]
fn f32_filter_agrees_with_f64() {
    let mut rng = common::rng(31);
    let model = common::random_model(&mut rng, 2, 2, 2, None);
    let y = common::simulate(&model, 20, &mut rng);
    let ll64 = loglik_at(&model, &panel(y.clone())).unwrap();
    let cast = |m: &DMatrix<f64>| m.map(|v| v as f32);
    let init = model.init();
    let init32 = Initialization { a1: init.a1.map(|v| v as f32), p_star: cast(&init.p_star), diffuse: init.diffuse.clone() };
    let m32 = StateSpaceModel::<f32>::new(
        Measurement::constant(cast(&model.z_at(0))),
        cast(model.transition()),
        cast(model.selection()),
        cast(model.state_cov()),
        model.obs_var().map(|v| v as f32),
        init32,
    )
    .unwrap();
    let ll32 = loglik_at(&m32, &Panel::from_matrix(cast(&y), Frequency::Monthly)).unwrap();
    assert!((ll32 as f64 - ll64).abs() < 1e-3 * ll64.abs().max(1.0));
}

#[test]
fn collapse_preserves_filtered_states_and_likelihood_differences() {
    let mut rng = common::rng(41);
    // state (L, R, f): y loads on L, a block of 12 series loads on f
    let n = 12;
    let mut z = DMatrix::zeros(1 + n, 3);
    z[(0, 0)] = 1.0;
    for i in 0..n {
        z[(1 + i, 2)] = rng.gen_range(0.1..1.0);
    }
    let h = DVector::from_fn(1 + n, |i, _| if i == 0 { 0.5 } else { rng.gen_range(0.5..2.0) });
    let build = |rho: f64, sr: f64| {
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut q = DMatrix::zeros(3, 3);
        q[(1, 1)] = sr * sr;
        q[(2, 2)] = 1.0;
        q[(1, 2)] = rho * sr;
        q[(2, 1)] = rho * sr;
        StateSpaceModel::new(
            Measurement::constant(z.clone()),
            t,
            DMatrix::identity(3, 3),
            q,
            h.clone(),
            Initialization::all_diffuse(3),
        )
        .unwrap()
    };
    let m0 = build(0.6, 1.0);
    let y = common::simulate(&m0, 60, &mut rng);
    let rows: Vec<usize> = (1..=n).collect();
    let mut diffs = Vec::new();
    for (rho, sr) in [(0.6, 1.0), (0.1, 0.4), (-0.3, 2.0)] {
        let full = build(rho, sr);
        let col = collapse_rows(&full, &y, &rows).unwrap();
        let of = filter(&full, &panel(y.clone())).unwrap();
        let oc = filter_with(&col.model, &col.data, FilterOptions::default()).unwrap();
        for t in of.d_diffuse.max(oc.d_diffuse)..60 {
            for k in 0..3 {
                assert_abs_diff_eq!(of.filtered_state[t][k], oc.filtered_state[t][k], epsilon = 1e-8);
                for l in 0..3 {
                    assert_abs_diff_eq!(of.filtered_cov[t][(k, l)], oc.filtered_cov[t][(k, l)], epsilon = 1e-8);
                }
            }
        }
        diffs.push(of.loglik - (oc.loglik + col.loglik_offset));
    }
    assert_abs_diff_eq!(diffs[0], diffs[1], epsilon = 1e-7);
    assert_abs_diff_eq!(diffs[0], diffs[2], epsilon = 1e-7);
}

#[test]
fn collapse_is_exact_without_diffuse_states() {
    let mut rng = common::rng(42);
    let n = 6;
    let mut z = DMatrix::zeros(1 + n, 2);
    z[(0, 0)] = 1.0;
    for i in 0..n {
        z[(1 + i, 1)] = rng.gen_range(0.1..1.0);
    }
    let h = DVector::from_fn(1 + n, |_, _| rng.gen_range(0.5..2.0));
    let model = StateSpaceModel::new(
        Measurement::constant(z),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.9])),
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
        h,
        Initialization::from_tags(&[StateInit::Exact(1.0), StateInit::Exact(2.0)]),
    )
    .unwrap();
    let mut y = common::simulate(&model, 30, &mut rng);
    for i in 1..=n {
        y[(29, i)] = f64::NAN;
    }
    let rows: Vec<usize> = (1..=n).collect();
    let col = collapse_rows(&model, &y, &rows).unwrap();
    let full = loglik_at(&model, &panel(y)).unwrap();
    let coll = filter_with(&col.model, &col.data, FilterOptions::loglik_only()).unwrap().loglik;
    assert_abs_diff_eq!(full, coll + col.loglik_offset, epsilon = 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loglik_matches_joint_density_oracle(seed in any::<u64>(), m in 1usize..=4, p in 1usize..=3, n in 4usize..=12, tv in any::<bool>()) {
        let mut rng = common::rng(seed);
        let q = rng.gen_range(1..=m);
        let model = common::random_model(&mut rng, m, p, q, tv.then_some(n));
        let mut y = common::simulate(&model, n, &mut rng);
        for t in 0..n {
            for i in 0..p {
                if rng.gen_bool(0.2) {
                    y[(t, i)] = f64::NAN;
                }
            }
        }
        if let Some(oracle) = common::dense_loglik(&model, &y) {
            let ll = loglik_at(&model, &panel(y)).unwrap();
            prop_assert!((ll - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()), "filter {ll} oracle {oracle}");
        }
    }

    #[test]
    fn update_never_increases_covariance(seed in any::<u64>(), m in 1usize..=4, p in 1usize..=3) {
        let mut rng = common::rng(seed);
        let mut model = common::random_model(&mut rng, m, p, m, None);
        let tags: Vec<StateInit<f64>> = (0..m).map(|_| StateInit::Exact(1.0)).collect();
        model = model.with_init(Initialization::from_tags(&tags)).unwrap();
        let y = common::simulate(&model, 10, &mut rng);
        let out = filter(&model, &panel(y)).unwrap();
        for t in 0..10 {
            let d = &out.predicted_cov[t] - &out.filtered_cov[t];
            let ev = d.symmetric_eigenvalues().min();
            prop_assert!(ev > -1e-9);
            let ev = out.filtered_cov[t].symmetric_eigenvalues().min();
            prop_assert!(ev > -1e-9);
        }
    }
}

#[test]
fn smoother_matches_gaussian_conditioning() {
    let (q, h, p1, n) = (0.5, 1.0, 2.0, 8);
    let mut model = rw_plus_noise(q, h);
    model = model.with_init(Initialization::from_tags(&[StateInit::Exact(p1)])).unwrap();
    let mut rng = common::rng(31);
    let mut y = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-2.0..2.0));
    y[(3, 0)] = f64::NAN;
    let sm = nowcast_core::ssm::smooth(&model, &y, 1e7).unwrap();
    let obs: Vec<usize> = (0..n).filter(|&t| y[(t, 0)].is_finite()).collect();
    let c = |t: usize, s: usize| p1 + q * t.min(s) as f64;
    let syy = DMatrix::from_fn(obs.len(), obs.len(), |a, b| c(obs[a], obs[b]) + if a == b { h } else { 0.0 });
    let yv = DVector::from_iterator(obs.len(), obs.iter().map(|&t| y[(t, 0)]));
    let inv = syy.try_inverse().unwrap();
    for t in 0..n {
        let sa = DVector::from_iterator(obs.len(), obs.iter().map(|&s| c(t, s)));
        let mean = (sa.transpose() * &inv * &yv)[0];
        let var = c(t, t) - (sa.transpose() * &inv * &sa)[0];
        assert_abs_diff_eq!(sm.state[t][0], mean, epsilon = 1e-10);
        assert_abs_diff_eq!(sm.cov[t][(0, 0)], var, epsilon = 1e-10);
    }
}
