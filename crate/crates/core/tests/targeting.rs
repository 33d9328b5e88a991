mod common;

use nalgebra::{DMatrix, DVector};
use nowcast_core::panel::{Frequency, Panel};
use nowcast_core::targeting::{bic, elastic_net, target_panel, ElasticNetOptions, TargetingGrid};
use nowcast_core::Error;
use proptest::prelude::*;

fn random_xy(t: usize, p: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>) {
    let mut rng = common::rng(seed);
    let x = DMatrix::from_fn(t, p, |_, j| (j as f64 + 1.0) * common::normal(&mut rng) + j as f64);
    let y = DVector::from_fn(t, |s, _| 0.7 * x[(s, 0)] - 0.2 * x[(s, 1)] + common::normal(&mut rng));
    (y, x)
}

fn standardized(y: &DVector<f64>, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let t = x.nrows() as f64;
    let ym = y.mean();
    let mut xs = x.clone();
    for mut c in xs.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
        let sd = (c.norm_squared() / t).sqrt();
        c /= sd;
    }
    (y.add_scalar(-ym), xs)
}

fn tight() -> ElasticNetOptions {
    ElasticNetOptions { tol: 1e-16, ..ElasticNetOptions::default() }
}

#[test]
fn ridge_matches_the_closed_form() {
    let (y, x) = random_xy(80, 6, 1);
    let (yc, xs) = standardized(&y, &x);
    let t = 80.0;
    for lambda in [0.01, 0.3, 2.0] {
        let a = xs.transpose() * &xs / t + DMatrix::identity(6, 6) * lambda;
        let oracle = a.lu().solve(&(xs.transpose() * &yc / t)).unwrap();
        let fit = elastic_net(&y, &x, lambda, 0.0, &tight()).unwrap();
        assert!((&fit.beta_std - &oracle).amax() <= 1e-8, "lambda {lambda}: {}", (&fit.beta_std - &oracle).amax());
    }
}

#[test]
fn lasso_on_orthonormal_columns_is_soft_thresholding() {
    let t = 60;
    let mut rng = common::rng(2);
    // orthogonalizing against a constant column keeps every column centered
    let stacked = DMatrix::from_fn(t, 6, |_, j| if j == 0 { 1.0 } else { common::normal(&mut rng) });
    let x = stacked.qr().q().columns(1, 5).into_owned() * (t as f64).sqrt();
    let y = DVector::from_fn(t, |s, _| 1.5 * x[(s, 0)] - 0.4 * x[(s, 3)] + 0.3 * common::normal(&mut rng));
    let ols = x.transpose() * y.add_scalar(-y.mean()) / t as f64;
    let lambda = 0.35;
    let fit = elastic_net(&y, &x, lambda, 1.0, &tight()).unwrap();
    for j in 0..5 {
        let b = ols[j];
        let expected = b.signum() * (b.abs() - lambda).max(0.0);
        assert!((fit.beta[j] - expected).abs() <= 1e-10, "j={j}: {} vs {expected}", fit.beta[j]);
    }
    assert!(fit.support().contains(&0));
}

#[test]
fn zero_penalty_is_least_squares() {
    let (y, x) = random_xy(100, 4, 3);
    let design = x.clone().insert_column(0, 1.0);
    let ols = design.svd(true, true).solve(&y, 1e-14).unwrap();
    let fit = elastic_net(&y, &x, 0.0, 0.5, &tight()).unwrap();
    for j in 0..4 {
        assert!((fit.beta[j] - ols[j + 1]).abs() <= 1e-7 * (1.0 + ols[j + 1].abs()), "j={j}");
    }
    assert!((fit.intercept - ols[0]).abs() <= 1e-6);
}

#[test]
fn infinite_penalty_selects_nothing() {
    let (y, x) = random_xy(50, 4, 4);
    let fit = elastic_net(&y, &x, f64::INFINITY, 0.5, &ElasticNetOptions::default()).unwrap();
    assert!(fit.support().is_empty());
    assert!((fit.intercept - y.mean()).abs() < 1e-12);

    let levels: Vec<f64> = y.iter().copied().collect();
    let panel = Panel::from_matrix(x, Frequency::Monthly);
    let grid = TargetingGrid { lambdas: Some(vec![f64::INFINITY]), ..TargetingGrid::default() };
    let r = target_panel(&levels, &panel, &grid, &ElasticNetOptions::default()).unwrap();
    assert!(r.selected.is_empty());
}

#[test]
fn invalid_inputs_are_rejected() {
    let (y, x) = random_xy(30, 3, 5);
    assert!(matches!(elastic_net(&y, &x, -1.0, 0.5, &ElasticNetOptions::default()), Err(Error::Config(_))));
    assert!(matches!(elastic_net(&y, &x, 1.0, 1.5, &ElasticNetOptions::default()), Err(Error::Config(_))));
    let levels: Vec<f64> = y.iter().copied().collect();
    let panel = Panel::from_matrix(x.clone(), Frequency::Monthly);
    let empty = TargetingGrid { alphas: vec![], ..TargetingGrid::default() };
    assert!(matches!(target_panel(&levels, &panel, &empty, &ElasticNetOptions::default()), Err(Error::Config(_))));
    let empty = TargetingGrid { lambdas: Some(vec![]), ..TargetingGrid::default() };
    assert!(matches!(target_panel(&levels, &panel, &empty, &ElasticNetOptions::default()), Err(Error::Config(_))));
    let mut holed = x;
    holed[(3, 1)] = f64::NAN;
    assert!(matches!(elastic_net(&y, &holed, 1.0, 0.5, &ElasticNetOptions::default()), Err(Error::Data(_))));
    let stuck = ElasticNetOptions { tol: 0.0, max_sweeps: 2 };
    let (y, x) = random_xy(30, 3, 6);
    assert!(matches!(elastic_net(&y, &x, 0.01, 0.5, &stuck), Err(Error::Optimization(_))));
}

/// Levels whose differences are `Δy = 0.8 Δx₀ + e`, alongside 50 unrelated random walks.
fn selection_panel(seed: u64) -> (Vec<f64>, Panel) {
    let t = 150;
    let p = 51;
    let mut rng = common::rng(seed);
    let dx = DMatrix::from_fn(t, p, |_, _| common::normal(&mut rng));
    let mut x = DMatrix::zeros(t, p);
    let mut y = vec![0.0; t];
    for s in 1..t {
        for j in 0..p {
            x[(s, j)] = x[(s - 1, j)] + dx[(s, j)];
        }
        y[s] = y[s - 1] + 0.8 * dx[(s, 0)] + 0.5 * common::normal(&mut rng);
    }
    (y, Panel::from_matrix(x, Frequency::Monthly))
}

#[test]
fn true_predictor_is_selected() {
    let mut hits = 0;
    for seed in 0..100 {
        let (y, panel) = selection_panel(1000 + seed);
        let r = target_panel(&y, &panel, &TargetingGrid::default(), &ElasticNetOptions::default()).unwrap();
        if r.selected.contains(&0) {
            hits += 1;
        }
        assert_eq!(r.selected_names.len(), r.selected.len());
    }
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn support_does_not_depend_on_column_units() {
    let (y, panel) = selection_panel(7);
    let a = target_panel(&y, &panel, &TargetingGrid::default(), &ElasticNetOptions::default()).unwrap();
    let scales: Vec<f64> = (0..panel.nseries()).map(|j| 0.01 * (1.0 + (j % 7) as f64 * 37.0)).collect();
    let mut v = panel.values().clone();
    for (j, mut c) in v.column_iter_mut().enumerate() {
        c *= scales[j];
    }
    let b = target_panel(&y, &Panel::from_matrix(v, Frequency::Monthly), &TargetingGrid::default(), &ElasticNetOptions::default()).unwrap();
    assert_eq!(a.selected, b.selected);
    for &j in &a.selected {
        assert!((a.beta[j] - b.beta[j] * scales[j]).abs() <= 1e-6 * (1.0 + a.beta[j].abs()));
    }
}

#[test]
fn larger_grids_never_raise_the_criterion() {
    let (y, panel) = selection_panel(8);
    let opts = ElasticNetOptions::default();
    let coarse = TargetingGrid { alphas: vec![0.5, 1.0], lambdas: Some(vec![0.3, 0.1, 0.03]), ..TargetingGrid::default() };
    let fine = TargetingGrid { alphas: vec![0.2, 0.5, 0.8, 1.0], lambdas: Some(vec![0.5, 0.3, 0.2, 0.1, 0.05, 0.03, 0.01]), ..TargetingGrid::default() };
    let a = target_panel(&y, &panel, &coarse, &opts).unwrap();
    let b = target_panel(&y, &panel, &fine, &opts).unwrap();
    assert!(b.bic <= a.bic + 1e-9, "{} > {}", b.bic, a.bic);
}

#[test]
fn criterion_formula() {
    let v = bic(50.0, 100, 3);
    assert!((v - (100.0 * (0.5f64).ln() + 3.0 * 100f64.ln())).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn sweeps_never_increase_the_objective(seed in 0u64..10_000, lambda in 0.001f64..1.0, alpha in 0.0f64..=1.0) {
        let (y, x) = random_xy(40, 8, seed);
        let fit = elastic_net(&y, &x, lambda, alpha, &ElasticNetOptions::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }
}
