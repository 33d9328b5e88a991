#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nowcast_core::ssm::{Initialization, Measurement, StateSpaceModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Diffuse log-likelihood from the joint Gaussian density of the stacked observations.
///
/// Diffuse initial states are treated as fixed unknown coefficients `δ` with a flat
/// prior; the result is `log p(y_b | y_a)` where `y_a` are the first observations (in
/// time/row order) that identify `δ`. Returns `None` when `δ` is not identified.
pub fn dense_loglik(model: &StateSpaceModel<f64>, y: &DMatrix<f64>) -> Option<f64> {
    let m = model.m();
    let n = y.nrows();
    let tm = model.transition();
    let init = model.init();
    let diff_idx: Vec<usize> = (0..m).filter(|&i| init.diffuse[i]).collect();
    let d = diff_idx.len();

    let mut powers = vec![DMatrix::<f64>::identity(m, m)];
    for t in 1..=n {
        powers.push(tm * &powers[t - 1]);
    }
    // state covariance Cov(α_t, α_s) from known init and innovations
    let rqr = model.state_noise();
    let cov = |t: usize, s: usize| -> DMatrix<f64> {
        let mut c = &powers[t] * &init.p_star * powers[s].transpose();
        for u in 0..t.min(s) {
            c += &powers[t - 1 - u] * rqr * powers[s - 1 - u].transpose();
        }
        c
    };

    let mut obs: Vec<(usize, usize)> = Vec::new();
    for t in 0..n {
        for i in 0..model.p() {
            if y[(t, i)].is_finite() {
                obs.push((t, i));
            }
        }
    }
    let nn = obs.len();
    let zrow = |t: usize, i: usize| -> DVector<f64> { model.z_at(t).row(i).transpose() };
    let mut mu = DVector::zeros(nn);
    let mut x = DMatrix::zeros(nn, d);
    let mut sigma = DMatrix::zeros(nn, nn);
    let mut yy = DVector::zeros(nn);
    for (a, &(t, i)) in obs.iter().enumerate() {
        let z = zrow(t, i);
        yy[a] = y[(t, i)];
        mu[a] = z.dot(&(&powers[t] * &init.a1));
        let zt = z.transpose() * &powers[t];
        for (k, &j) in diff_idx.iter().enumerate() {
            x[(a, k)] = zt[j];
        }
        for (b, &(s, l)) in obs.iter().enumerate().take(a + 1) {
            let w = zrow(s, l);
            let v = (z.transpose() * cov(t, s) * &w)[0];
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
        sigma[(a, a)] += model.obs_var()[i];
    }
    let r = &yy - &mu;
    let chol = sigma.clone().cholesky()?;
    let logdet_sigma = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let si_r = chol.solve(&r);
    let mut quad = r.dot(&si_r);
    let mut extra = 0.0;
    if d > 0 {
        // rows of X (in filter order) that raise the rank, up to d
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut xa_rows = Vec::new();
        for a in 0..nn {
            let mut v = x.row(a).transpose();
            let norm0 = v.norm();
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
            if v.norm() > 1e-8 * norm0.max(1.0) {
                basis.push(&v / v.norm());
                xa_rows.push(a);
                if basis.len() == d {
                    break;
                }
            }
        }
        if basis.len() < d {
            return None;
        }
        let xa = DMatrix::from_fn(d, d, |i, j| x[(xa_rows[i], j)]);
        let logdet_xa = xa.determinant().abs().ln();
        let si_x = chol.solve(&x);
        let xtsx = x.transpose() * &si_x;
        let c2 = xtsx.clone().cholesky()?;
        let logdet_xtsx = 2.0 * c2.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let b = x.transpose() * &si_r;
        quad -= b.dot(&c2.solve(&b));
        extra = -0.5 * logdet_xtsx + logdet_xa;
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    Some(-0.5 * ((nn - d) as f64 * ln2pi + logdet_sigma + quad) + extra)
}

/// A random small model with a random diffuse/exact split.
pub fn random_model(rng: &mut ChaCha8Rng, m: usize, p: usize, q: usize, time_varying: Option<usize>) -> StateSpaceModel<f64> {
    let t = DMatrix::from_fn(m, m, |i, j| if i == j { rng.gen_range(0.3..1.0) } else { 0.4 * normal(rng) });
    let r = DMatrix::from_fn(m, q, |_, _| normal(rng));
    let b = DMatrix::from_fn(q, q, |_, _| normal(rng));
    let qm = &b * b.transpose() * 0.5;
    let h = DVector::from_fn(p, |_, _| rng.gen_range(0.2..1.5));
    let z = DMatrix::from_fn(p, m, |_, _| normal(rng));
    let meas = match time_varying {
        Some(n) => {
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            Measurement::with_varying(z, vec![(0, 0, vals)])
        }
        None => Measurement::constant(z),
    };
    let mut init = Initialization::from_tags(
        &(0..m)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    nowcast_core::ssm::StateInit::Diffuse
                } else {
                    nowcast_core::ssm::StateInit::Exact(rng.gen_range(0.1..2.0))
                }
            })
            .collect::<Vec<_>>(),
    );
    init.a1 = DVector::from_fn(m, |i, _| if init.diffuse[i] { 0.0 } else { normal(rng) });
    StateSpaceModel::new(meas, t, r, qm, h, init).unwrap()
}

/// Simulates `n` periods from a model whose diffuse states start at `start_diffuse`.
pub fn simulate(model: &StateSpaceModel<f64>, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = model.m();
    let init = model.init();
    let mut a = init.a1.clone();
    let pchol = (&init.p_star + DMatrix::identity(m, m) * 1e-14).cholesky().unwrap();
    let e = DVector::from_fn(m, |_, _| normal(rng));
    a += pchol.l() * e;
    for i in 0..m {
        if init.diffuse[i] {
            a[i] = 3.0 * normal(rng);
        }
    }
    let qd = model.q_dim();
    let qchol = (model.state_cov() + DMatrix::identity(qd, qd) * 1e-14).cholesky().unwrap();
    let mut y = DMatrix::zeros(n, model.p());
    for t in 0..n {
        let z = model.z_at(t);
        let mean = &z * &a;
        for i in 0..model.p() {
            y[(t, i)] = mean[i] + model.obs_var()[i].max(0.0).sqrt() * normal(rng);
        }
        let eta = qchol.l() * DVector::from_fn(qd, |_, _| normal(rng));
        a = model.transition() * &a + model.selection() * eta;
    }
    y
}
