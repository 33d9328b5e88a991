//! Fixed-interval (Rauch–Tung–Striebel) state smoother.

use nalgebra::{DMatrix, DVector};

use super::filter::{filter_with, DiffuseMethod, FilterOptions};
use super::model::{symmetrize, StateSpaceModel};
use crate::error::Result;
use crate::scalar::Scalar;

/// Smoothed means `a_{t|n}` and covariances `P_{t|n}`.
#[derive(Debug, Clone)]
pub struct SmootherOutput<S: Scalar> {
    pub state: Vec<DVector<S>>,
    pub cov: Vec<DMatrix<S>>,
    pub loglik: S,
}

/// RTS smoother on top of a large-`κ` filter pass, so that every stored
/// covariance is finite. Singular predicted covariances are inverted on their
/// range.
pub fn smooth<S: Scalar>(model: &StateSpaceModel<S>, y: &DMatrix<S>, kappa: S) -> Result<SmootherOutput<S>> {
    let out = filter_with(model, y, FilterOptions { diffuse: DiffuseMethod::LargeKappa(kappa.to_f64_lossy()), store: true })?;
    let n = out.len();
    let mut state = out.filtered_state.clone();
    let mut cov = out.filtered_cov.clone();
    let tt = model.transition();
    for t in (0..n.saturating_sub(1)).rev() {
        let pinv = pseudo_inverse(&out.predicted_cov[t + 1]);
        let j = &out.filtered_cov[t] * tt.transpose() * pinv;
        state[t] = &out.filtered_state[t] + &j * (&state[t + 1] - &out.predicted_state[t + 1]);
        let mut p = &out.filtered_cov[t] + &j * (&cov[t + 1] - &out.predicted_cov[t + 1]) * j.transpose();
        symmetrize(&mut p);
        cov[t] = p;
    }
    Ok(SmootherOutput { state, cov, loglik: out.loglik })
}

fn pseudo_inverse<S: Scalar>(p: &DMatrix<S>) -> DMatrix<S> {
    if let Some(c) = p.clone().cholesky() {
        return c.inverse();
    }
    let eig = p.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(S::zero(), |a, &b| a.max(b.abs()));
    let tol = top * S::lit(1e-12);
    let inv = eig.eigenvalues.map(|v| if v > tol { S::one() / v } else { S::zero() });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
