mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use nowcast_core::factors::{em_iterate, em_step_smoothed, ic_bai_ng, pca_nonstationary, standardized_differences, two_step, TwoStepOptions};
use nowcast_core::lf_model::{self, HyperParams};
use nowcast_core::panel::{Frequency, Panel};
use nowcast_core::ssm::{filter_with, smooth, FilterOptions};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Sim {
    x: DMatrix<f64>,
    f: DMatrix<f64>,
    lambda: DMatrix<f64>,
}

/// `x = Λ f + ε` with random-walk factors, `Λ ~ U(0,1)·scale`, `ε ~ N(0, psi)`.
fn factor_panel(rng: &mut ChaCha8Rng, t: usize, n: usize, r: usize, scale: f64, psi: f64) -> Sim {
    let lambda = DMatrix::from_fn(n, r, |_, _| scale * rng.gen::<f64>());
    let mut f = DMatrix::<f64>::zeros(t, r);
    for s in 1..t {
        for k in 0..r {
            f[(s, k)] = f[(s - 1, k)] + common::normal(rng);
        }
    }
    let common_part: DMatrix<f64> = &f * lambda.transpose();
    let x = DMatrix::from_fn(t, n, |s, i| common_part[(s, i)] + psi.sqrt() * common::normal(rng));
    Sim { x, f, lambda }
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    c / (va * vb).sqrt()
}

fn panel(x: DMatrix<f64>) -> Panel {
    Panel::from_matrix(x, Frequency::Monthly)
}

#[test]
fn single_factor_is_recovered() {
    let mut rng = common::rng(1);
    let mut good = 0;
    for _ in 0..20 {
        let sim = factor_panel(&mut rng, 150, 100, 1, 1.0, 0.5);
        let dec = pca_nonstationary(&panel(sim.x), 1).unwrap();
        let fh: Vec<f64> = dec.factors.column(0).iter().copied().collect();
        // the drift of Δf is not identified from demeaned differences
        let drift = sim.f[(149, 0)] / 149.0;
        let ft: Vec<f64> = sim.f.column(0).iter().enumerate().map(|(s, v)| v - drift * s as f64).collect();
        if corr(&fh, &ft).abs() > 0.95 {
            good += 1;
        }
    }
    assert_eq!(good, 20);
}

#[test]
fn one_series_pca_is_the_standardized_cumulated_series() {
    let mut rng = common::rng(2);
    let x: Vec<f64> = (0..60).scan(0.0, |a, _| {
        *a += 0.7 + 2.0 * common::normal(&mut rng);
        Some(*a)
    }).collect();
    let dec = pca_nonstationary(&panel(DMatrix::from_column_slice(60, 1, &x)), 1).unwrap();
    let d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let m = d.iter().sum::<f64>() / 59.0;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 58.0).sqrt();
    assert_abs_diff_eq!(dec.loadings[(0, 0)].abs(), sd, epsilon = 1e-10);
    let mut acc = 0.0;
    for (s, v) in d.iter().enumerate() {
        acc += (v - m) / sd;
        assert_abs_diff_eq!(dec.factors[(s + 1, 0)].abs(), acc.abs(), epsilon = 1e-9);
    }
    assert!(dec.idio_var_diff[0] < 1e-8 * sd * sd);
    // the drift is absorbed by the linear trend in the level residual
    assert!(dec.idio_var[0] < 1e-8 * sd * sd);
}

#[test]
fn scaling_the_panel_scales_only_the_loadings() {
    let mut rng = common::rng(3);
    let sim = factor_panel(&mut rng, 80, 12, 2, 1.0, 0.5);
    let a = pca_nonstationary(&panel(sim.x.clone()), 2).unwrap();
    let b = pca_nonstationary(&panel(sim.x * 2.0), 2).unwrap();
    assert!((&a.factors - &b.factors).amax() < 1e-9);
    assert!((&a.loadings * 2.0 - &b.loadings).amax() < 1e-9);
    assert!((&a.idio_var * 4.0 - &b.idio_var).amax() < 1e-8);
}

#[test]
fn loadings_follow_the_pca_normalization() {
    let mut rng = common::rng(4);
    let sim = factor_panel(&mut rng, 120, 30, 3, 1.0, 0.5);
    let dec = pca_nonstationary(&panel(sim.x.clone()), 3).unwrap();
    let g = dec.std_loadings.transpose() * &dec.std_loadings;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert!(g[(i, j)].abs() < 1e-9);
            }
        }
    }
    assert!(g[(0, 0)] >= g[(1, 1)] && g[(1, 1)] >= g[(2, 2)]);
    for k in 0..3 {
        let first = dec.std_loadings.column(k).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
        assert!(first >= 0.0);
    }
    // Δf̂ reproduces the principal-component scores and has unit variance
    let (z, _) = standardized_differences(&sim.x).unwrap();
    let eig = (z.transpose() * &z / (z.nrows() as f64 - 1.0)).symmetric_eigen();
    let top = (0..eig.eigenvalues.len()).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
    let v = eig.eigenvectors.column(top);
    let scores = &z * v / eig.eigenvalues[top].sqrt();
    for s in 0..z.nrows() {
        let df = dec.factors[(s + 1, 0)] - dec.factors[(s, 0)];
        assert_abs_diff_eq!(df.abs(), scores[s].abs(), epsilon = 1e-9);
    }
    assert!(dec.idio_var.iter().all(|&p| p > 0.0));
}

#[test]
fn too_many_factors_is_an_estimation_error() {
    let mut rng = common::rng(5);
    let base: Vec<f64> = (0..40).scan(0.0, |a, _| {
        *a += common::normal(&mut rng);
        Some(*a)
    }).collect();
    let x = DMatrix::from_fn(40, 3, |s, j| (j + 1) as f64 * base[s]);
    assert!(matches!(pca_nonstationary(&panel(x.clone()), 2), Err(nowcast_core::Error::Estimation(_))));
    assert!(pca_nonstationary(&panel(x), 4).is_err());
}

#[test]
fn information_criteria_on_noise_and_two_factor_panels() {
    let mut rng = common::rng(6);
    let noise = factor_panel(&mut rng, 150, 100, 1, 0.0, 1.0);
    // a pure-noise panel still needs nonconstant differences
    let (_, r2, _) = ic_bai_ng(&panel(noise.x), 10).unwrap();
    assert!(r2 <= 2, "IC2 picked {r2}");
    for _ in 0..10 {
        // loadings of both signs keep the two factors well separated
        let mut two = factor_panel(&mut rng, 150, 100, 2, 0.0, 1.0);
        let lambda = DMatrix::from_fn(100, 2, |_, _| rng.gen_range(-1.0..1.0));
        two.x += &two.f * lambda.transpose();
        assert_eq!(ic_bai_ng(&panel(two.x), 10).unwrap(), (2, 2, 2));
    }
}

#[test]
fn two_step_without_factors_passes_through() {
    let mut rng = common::rng(7);
    let sim = factor_panel(&mut rng, 50, 8, 1, 1.0, 0.5);
    let (spec, dec) = two_step(&panel(sim.x.clone()), 0, &TwoStepOptions::default()).unwrap();
    assert!(!spec.include_gt && dec.is_none());
    let opts = TwoStepOptions { include_cc: true, ..TwoStepOptions::default() };
    let (spec, dec) = two_step(&panel(sim.x), 1, &opts).unwrap();
    let dec = dec.unwrap();
    assert!(spec.include_gt && spec.include_cc && spec.r == 1);
    assert_eq!(spec.loadings, dec.loadings);
    assert_eq!(spec.psi, dec.idio_var);
}

#[test]
fn two_step_uses_differenced_variance_for_integrated_idiosyncratics() {
    let mut rng = common::rng(8);
    let sim = factor_panel(&mut rng, 60, 6, 1, 1.0, 0.5);
    let mask = vec![true, false, false, false, false, true];
    let opts = TwoStepOptions { i1_idio_mask: Some(mask.clone()), ..TwoStepOptions::default() };
    let (spec, dec) = two_step(&panel(sim.x), 1, &opts).unwrap();
    let dec = dec.unwrap();
    assert_eq!(spec.i1_idio_mask, mask);
    assert_eq!(spec.psi[0], dec.idio_var_diff[0]);
    assert_eq!(spec.psi[1], dec.idio_var[1]);
}

/// Sums of consecutive blocks of four weeks.
fn monthly_sums(x: &DMatrix<f64>) -> DMatrix<f64> {
    let months = x.nrows() / 4;
    DMatrix::from_fn(months, x.ncols(), |m, j| (0..4).map(|w| x[(4 * m + w, j)]).sum())
}

fn direction_error(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let e = est.column(0).normalize();
    let t = truth.column(0).normalize();
    let s = if e.dot(&t) < 0.0 { -1.0 } else { 1.0 };
    (e * s - t).norm()
}

#[test]
fn weekly_estimation_beats_monthly_aggregates_when_weekly_is_the_sampling() {
    let mut rng = common::rng(9);
    let mut wins = 0;
    for _ in 0..100 {
        let mut sim = factor_panel(&mut rng, 240, 30, 1, 1.0, 0.0);
        // persistent idiosyncratic components: aggregation does not average them out
        for i in 0..30 {
            let mut e = 0.0;
            for s in 0..240 {
                e += 0.7 * common::normal(&mut rng);
                sim.x[(s, i)] += e;
            }
        }
        let weekly = Panel::from_matrix(sim.x.clone(), Frequency::Weekly);
        let monthly = panel(monthly_sums(&sim.x));
        let w = pca_nonstationary(&weekly, 1).unwrap();
        let m = pca_nonstationary(&monthly, 1).unwrap();
        // standardized loadings on each sampling, compared by direction
        let tw = DMatrix::from_fn(30, 1, |i, _| sim.lambda[(i, 0)] / w.scaling.diff_sd[i]);
        let tm = DMatrix::from_fn(30, 1, |i, _| sim.lambda[(i, 0)] / m.scaling.diff_sd[i]);
        if direction_error(&w.std_loadings, &tw) < direction_error(&m.std_loadings, &tm) {
            wins += 1;
        }
    }
    assert!(wins >= 60, "{wins}/100");
}

#[test]
fn rescaling_keeps_standardized_loadings() {
    let mut rng = common::rng(10);
    let sim = factor_panel(&mut rng, 200, 10, 1, 1.0, 0.5);
    let weekly = Panel::from_matrix(sim.x.clone(), Frequency::Weekly);
    let monthly = panel(monthly_sums(&sim.x));
    let w = pca_nonstationary(&weekly, 1).unwrap();
    let opts = TwoStepOptions { estimation_panel: Some(weekly), ..TwoStepOptions::default() };
    let (spec, dec) = two_step(&monthly, 1, &opts).unwrap();
    let dec = dec.unwrap();
    assert_eq!(dec.factors.nrows(), 50);
    let a = w.std_loadings.column(0).normalize();
    let b = dec.std_loadings.column(0).normalize();
    assert_abs_diff_eq!(a.dot(&b), 1.0, epsilon = 1e-12);
    assert!(spec.psi.iter().all(|&p| p > 0.0));
}

#[test]
fn em_step_fixed_point_and_positive_variances() {
    let mut rng = common::rng(11);
    let sim = factor_panel(&mut rng, 100, 15, 2, 1.0, 0.5);
    let p = panel(sim.x);
    let dec = pca_nonstationary(&p, 2).unwrap();
    let again = em_iterate(&dec, &dec.factors, &p).unwrap();
    assert!((&again.loadings - &dec.loadings).amax() < 1e-8);
    assert!(again.idio_var.iter().all(|&v| v > 0.0));
    assert!(again.idio_var_diff.iter().all(|&v| v > 0.0));
    let collinear = DMatrix::from_fn(100, 2, |s, _| s as f64);
    assert!(em_iterate(&dec, &collinear, &p).is_err());
}

#[test]
fn em_step_does_not_lower_the_likelihood() {
    let t = 80;
    let n = 20;
    let c = DMatrix::from_element(t, 5, 1.0);
    let hp = HyperParams { rho_gt: vec![0.6], sigma_r_y: 0.3, ..HyperParams::default() };
    let mut rng = common::rng(12);
    let lambda = DMatrix::from_fn(n, 1, |_, _| rng.gen::<f64>());
    let psi = DVector::from_element(n, 0.5);
    let truth = lf_model::build_with_gt(&lf_model::ModelSpec::with_gt(lambda, psi, false), &hp, &c).unwrap();
    let mut ups = 0;
    for rep in 0..50 {
        let mut r = common::rng(500 + rep);
        let y = common::simulate(&truth, t, &mut r);
        let x = panel(y.columns(5, n).into_owned());
        let (spec, dec) = two_step(&x, 1, &TwoStepOptions::default()).unwrap();
        let dec = dec.unwrap();
        let mut data = y.clone();
        data.columns_mut(5, n).copy_from(&dec.center_levels(x.values()));
        let m0 = lf_model::build_with_gt(&spec, &hp, &c).unwrap();
        let l0 = filter_with(&m0, &data, FilterOptions::loglik_only()).unwrap().loglik;
        let sm = smooth(&m0, &data, 1e7).unwrap();
        let f = DMatrix::from_fn(t, 1, |s, _| sm.state[s][30]);
        let p: Vec<DMatrix<f64>> = sm.cov.iter().map(|c| c.view((30, 30), (1, 1)).into_owned()).collect();
        let dec1 = em_step_smoothed(&dec, &f, &p, &data.columns(5, n).into_owned()).unwrap();
        let mut spec1 = spec.clone();
        spec1.loadings = dec1.loadings.clone();
        spec1.psi = dec1.idio_var.clone();
        let mut data1 = y.clone();
        data1.columns_mut(5, n).copy_from(&dec1.center_levels(x.values()));
        let m1 = lf_model::build_with_gt(&spec1, &hp, &c).unwrap();
        let l1 = filter_with(&m1, &data1, FilterOptions::loglik_only()).unwrap().loglik;
        if l1 >= l0 {
            ups += 1;
        }
    }
    assert!(ups >= 45, "{ups}/50");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pca_is_deterministic_with_nonnegative_leading_loadings(seed in 0u64..1000, r in 1usize..4) {
        let mut rng = common::rng(seed);
        let sim = factor_panel(&mut rng, 40, 8, 2, 1.0, 0.5);
        let a = pca_nonstationary(&panel(sim.x.clone()), r).unwrap();
        let b = pca_nonstationary(&panel(sim.x), r).unwrap();
        prop_assert_eq!(&a.loadings, &b.loadings);
        prop_assert_eq!(&a.factors, &b.factors);
        for k in 0..r {
            let first = a.std_loadings.column(k).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
            prop_assert!(first >= 0.0);
        }
        prop_assert!(a.idio_var.iter().all(|&v| v > 0.0));
    }
}
