//! Exact dimension reduction of large measurement blocks.
//!
//! For a block of rows `y_O = Λ α + e`, `e ~ N(0, Ψ)` with constant `Λ` and
//! diagonal `Ψ > 0`, the block is replaced by `w = L^{-1} Λ'Ψ^{-1} y_O` with
//! `Λ'Ψ^{-1}Λ = L L'`, so that `w = L' α_S + N(0, I)`. The log-likelihood
//! changes by a term that does not involve the state process.

use nalgebra::{DMatrix, DVector};

use super::model::{Measurement, StateSpaceModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A collapsed model, its transformed data, and the likelihood offset.
#[derive(Debug, Clone)]
pub struct Collapsed<S: Scalar> {
    pub model: StateSpaceModel<S>,
    pub data: DMatrix<S>,
    /// Rows of the original model kept as-is (in order), followed by the collapsed rows.
    pub kept_rows: Vec<usize>,
    /// `log p(y_O | α) - log p(w | α)` summed over periods.
    pub loglik_offset: S,
}

/// Collapses `rows` of `model`. Each row must have a constant loading and `H > 0`,
/// and in every period the block must be either fully observed or fully missing.
pub fn collapse_rows<S: Scalar>(model: &StateSpaceModel<S>, y: &DMatrix<S>, rows: &[usize]) -> Result<Collapsed<S>> {
    let zm = model.measurement();
    let h = model.obs_var();
    let p = model.p();
    let m = model.m();
    let mut in_block = vec![false; p];
    for &i in rows {
        if i >= p || in_block[i] {
            return Err(Error::Config(format!("invalid collapse row {i}")));
        }
        if !zm.row_is_constant(i) || h[i] <= S::zero() {
            return Err(Error::Config(format!("row {i} cannot be collapsed")));
        }
        in_block[i] = true;
    }
    let kept: Vec<usize> = (0..p).filter(|&i| !in_block[i]).collect();
    let base = zm.base();

    let mut cols: Vec<usize> = (0..m).filter(|&j| rows.iter().any(|&i| base[(i, j)] != S::zero())).collect();
    cols.sort_unstable();
    let s = cols.len();
    let n_o = rows.len();
    let lambda = DMatrix::from_fn(n_o, s, |a, b| base[(rows[a], cols[b])]);
    let psi_inv = DVector::from_iterator(n_o, rows.iter().map(|&i| S::one() / h[i]));
    let mut lt_psi = lambda.transpose();
    for a in 0..n_o {
        let scale = psi_inv[a];
        lt_psi.column_mut(a).scale_mut(scale);
    }
    let mmat = &lt_psi * &lambda;
    let chol = mmat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("collapsed loading block is rank deficient".into()))?;
    let l = chol.l();
    // A = L^{-1} Λ'Ψ^{-1}
    let amat = l
        .solve_lower_triangular(&lt_psi)
        .ok_or_else(|| Error::Config("singular collapse factor".into()))?;
    let mhat_inv_lt = chol.solve(&lt_psi);
    let log_det_psi = rows.iter().fold(S::zero(), |acc, &i| acc + h[i].ln());
    let log2pi = S::two_pi().ln();

    let n = y.nrows();
    let mut data = DMatrix::from_element(n, kept.len() + s, S::nan());
    let mut offset = S::zero();
    for t in 0..n {
        for (k, &i) in kept.iter().enumerate() {
            data[(t, k)] = y[(t, i)];
        }
        let nobs = rows.iter().filter(|&&i| y[(t, i)].is_finite_value()).count();
        if nobs == 0 {
            continue;
        }
        if nobs != n_o {
            return Err(Error::Data(format!("collapsed block partially observed at t={t}")));
        }
        let yo = DVector::from_iterator(n_o, rows.iter().map(|&i| y[(t, i)]));
        let w = &amat * &yo;
        for k in 0..s {
            data[(t, kept.len() + k)] = w[k];
        }
        let ghat = &mhat_inv_lt * &yo;
        let e = &yo - &lambda * &ghat;
        let quad = e.iter().zip(psi_inv.iter()).fold(S::zero(), |acc, (ei, pi)| acc + *ei * *ei * *pi);
        offset -= S::lit(0.5) * (S::from_usize(n_o - s).unwrap() * log2pi + log_det_psi + quad);
    }

    let mut zbase = DMatrix::zeros(kept.len() + s, m);
    let mut hnew = DVector::zeros(kept.len() + s);
    let mut varying = Vec::new();
    for (k, &i) in kept.iter().enumerate() {
        for j in 0..m {
            zbase[(k, j)] = base[(i, j)];
        }
        hnew[k] = h[i];
    }
    for (i, j, vals) in zm.varying_cells() {
        if let Some(k) = kept.iter().position(|r| r == i) {
            varying.push((k, *j, vals.clone()));
        }
    }
    let lt = l.transpose();
    for a in 0..s {
        for b in 0..s {
            zbase[(kept.len() + a, cols[b])] = lt[(a, b)];
        }
        hnew[kept.len() + a] = S::one();
    }
    let model = model.with_measurement(Measurement::with_varying(zbase, varying), hnew)?;
    Ok(Collapsed { model, data, kept_rows: kept, loglik_offset: offset })
}
