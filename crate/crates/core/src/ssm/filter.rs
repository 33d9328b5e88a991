//! Kalman filter with exact diffuse initialization.
//!
//! Observations are processed one element at a time (Koopman–Durbin univariate
//! treatment), which requires diagonal `H`. Missing cells are skipped.

use nalgebra::{DMatrix, DVector};

use super::model::{symmetrize, StateSpaceModel};
use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::scalar::Scalar;

/// How diffuse initial states are handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffuseMethod {
    /// Exact diffuse recursions; loglik drops the diffuse (`F∞ > 0`) terms.
    Exact,
    /// Diffuse states get variance `κ`; the first `#diffuse` periods are dropped from the loglik.
    LargeKappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub diffuse: DiffuseMethod,
    /// Keep per-period states, covariances and innovations.
    pub store: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { diffuse: DiffuseMethod::Exact, store: true }
    }
}

impl FilterOptions {
    pub fn loglik_only() -> Self {
        Self { store: false, ..Self::default() }
    }
}

/// Per-period output of [`filter`]. Index `t` is zero-based.
#[derive(Debug, Clone)]
pub struct FilterOutput<S: Scalar> {
    /// `a_{t|t}`
    pub filtered_state: Vec<DVector<S>>,
    /// `P_{t|t}` (known part while diffuse directions remain)
    pub filtered_cov: Vec<DMatrix<S>>,
    /// `a_{t|t-1}`
    pub predicted_state: Vec<DVector<S>>,
    /// `P_{t|t-1}` (known part while diffuse directions remain)
    pub predicted_cov: Vec<DMatrix<S>>,
    /// `v_t`, NaN where the cell is missing.
    pub innovations: Vec<DVector<S>>,
    /// `F_t = Z P_{t|t-1} Z' + H` over all `p` rows; rows of missing cells are meaningless.
    pub innovation_cov: Vec<DMatrix<S>>,
    /// Observation mask per period.
    pub observed: Vec<Vec<bool>>,
    /// Whether diffuse directions were still unresolved at the start of period `t`.
    pub diffuse_period: Vec<bool>,
    pub loglik: S,
    /// Number of initial periods consumed by the diffuse initialization.
    pub d_diffuse: usize,
    /// Number of scalar observations contributing to `loglik`.
    pub n_loglik_terms: usize,
}

impl<S: Scalar> FilterOutput<S> {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// Standardized innovations `B_t v_t` with `F_t^{-1} = B_t' B_t`, for `t >= d_diffuse`.
    ///
    /// Entries of missing cells are NaN. Uses the lower Cholesky factor `F_t = L L'`
    /// and returns `L^{-1} v_t` over the observed rows.
    pub fn standardized_innovations(&self) -> Result<Vec<DVector<S>>> {
        let mut out = Vec::with_capacity(self.len().saturating_sub(self.d_diffuse));
        for t in self.d_diffuse..self.len() {
            out.push(standardize(&self.innovations[t], &self.innovation_cov[t], &self.observed[t], t)?);
        }
        Ok(out)
    }
}

/// `L^{-1} v` over observed rows, with the regularization `F + 1e-12 tr(F)/p I`.
pub fn standardize<S: Scalar>(v: &DVector<S>, f: &DMatrix<S>, observed: &[bool], t: usize) -> Result<DVector<S>> {
    let idx: Vec<usize> = (0..v.len()).filter(|&i| observed[i]).collect();
    let mut out = DVector::from_element(v.len(), S::nan());
    if idx.is_empty() {
        return Ok(out);
    }
    let k = idx.len();
    let mut fo = DMatrix::from_fn(k, k, |a, b| f[(idx[a], idx[b])]);
    let tr = fo.trace();
    let ridge = S::lit(1e-12) * tr / S::from_usize(k).unwrap();
    for i in 0..k {
        fo[(i, i)] += ridge;
    }
    let chol = fo.cholesky().ok_or_else(|| Error::FilterDegenerate {
        t,
        reason: "innovation covariance not positive definite".into(),
    })?;
    let vo = DVector::from_iterator(k, idx.iter().map(|&i| v[i]));
    let z = chol.l().solve_lower_triangular(&vo).ok_or_else(|| Error::FilterDegenerate {
        t,
        reason: "singular Cholesky factor".into(),
    })?;
    for (a, &i) in idx.iter().enumerate() {
        out[i] = z[a];
    }
    Ok(out)
}

/// Log-likelihood only.
pub fn loglik_at<S: Scalar>(model: &StateSpaceModel<S>, y: &Panel<S>) -> Result<S> {
    filter_with(model, y.values(), FilterOptions::loglik_only()).map(|o| o.loglik)
}

/// Filter with default options (exact diffuse, stored output).
pub fn filter<S: Scalar>(model: &StateSpaceModel<S>, y: &Panel<S>) -> Result<FilterOutput<S>> {
    filter_with(model, y.values(), FilterOptions::default())
}

/// Runs the filter over the rows of `y` (`T × p`, non-finite = missing).
pub fn filter_with<S: Scalar>(
    model: &StateSpaceModel<S>,
    y: &DMatrix<S>,
    opts: FilterOptions,
) -> Result<FilterOutput<S>> {
    let m = model.m();
    let p = model.p();
    let n = y.nrows();
    if y.ncols() != p {
        return Err(Error::Config(format!("data has {} columns, model expects {p}", y.ncols())));
    }
    if let Some(h) = model.measurement().horizon() {
        if h < n {
            return Err(Error::Config(format!("time-varying Z covers {h} periods, data has {n}")));
        }
    }
    let zm = model.measurement();
    let hv = model.obs_var();
    let init = model.init();
    let log2pi = S::two_pi().ln();
    let half = S::lit(0.5);

    let mut a = init.a1.clone();
    let mut pstar = init.p_star.clone();
    let mut pinf = DMatrix::<S>::zeros(m, m);
    let mut diffuse = false;
    let mut burn_periods = 0usize;
    match opts.diffuse {
        DiffuseMethod::Exact => {
            for i in 0..m {
                if init.diffuse[i] {
                    pinf[(i, i)] = S::one();
                    diffuse = true;
                }
            }
        }
        DiffuseMethod::LargeKappa(kappa) => {
            for i in 0..m {
                if init.diffuse[i] {
                    pstar[(i, i)] = S::lit(kappa);
                }
            }
            burn_periods = init.n_diffuse();
        }
    }
    // running maximum of diag(P∞) per state, the reference scale for cancellation
    let mut pinf_peak: Vec<S> = (0..m).map(|i| pinf[(i, i)]).collect();

    let cap = if opts.store { n } else { 0 };
    let mut out = FilterOutput {
        filtered_state: Vec::with_capacity(cap),
        filtered_cov: Vec::with_capacity(cap),
        predicted_state: Vec::with_capacity(cap),
        predicted_cov: Vec::with_capacity(cap),
        innovations: Vec::with_capacity(cap),
        innovation_cov: Vec::with_capacity(cap),
        observed: Vec::with_capacity(cap),
        diffuse_period: Vec::with_capacity(cap),
        loglik: S::zero(),
        d_diffuse: 0,
        n_loglik_terms: 0,
    };

    let mut ms = DVector::<S>::zeros(m);
    let mut mi = DVector::<S>::zeros(m);
    let mut k0 = DVector::<S>::zeros(m);
    let mut work = DMatrix::<S>::zeros(m, m);
    let mut zrow: Vec<(usize, S)> = Vec::with_capacity(m);

    for t in 0..n {
        let obs: Vec<bool> = (0..p).map(|i| y[(t, i)].is_finite_value()).collect();
        let diffuse_at_start = diffuse;
        if diffuse {
            out.d_diffuse = t + 1;
        }
        if opts.store {
            out.predicted_state.push(a.clone());
            out.predicted_cov.push(pstar.clone());
            let mut v = DVector::from_element(p, S::nan());
            let mut f = DMatrix::zeros(p, p);
            let mut cols: Vec<DVector<S>> = Vec::with_capacity(p);
            let mut rows: Vec<Vec<(usize, S)>> = Vec::with_capacity(p);
            for i in 0..p {
                let row: Vec<(usize, S)> = zm.rows[i].iter().map(|(j, zv)| (*j, zm.value(zv, t))).collect();
                let mut c = DVector::zeros(m);
                for &(j, zj) in &row {
                    c.axpy(zj, &pstar.column(j), S::one());
                }
                if obs[i] {
                    v[i] = y[(t, i)] - row.iter().fold(S::zero(), |acc, &(j, zj)| acc + zj * a[j]);
                }
                cols.push(c);
                rows.push(row);
            }
            for i in 0..p {
                for k in 0..p {
                    f[(i, k)] = rows[k].iter().fold(S::zero(), |acc, &(j, zj)| acc + zj * cols[i][j]);
                }
                f[(i, i)] += hv[i];
            }
            symmetrize(&mut f);
            out.innovations.push(v);
            out.innovation_cov.push(f);
        }

        for i in 0..p {
            if !obs[i] {
                continue;
            }
            zrow.clear();
            zrow.extend(zm.rows[i].iter().map(|(j, zv)| (*j, zm.value(zv, t))));
            let mut v = y[(t, i)];
            for &(j, zj) in &zrow {
                v -= zj * a[j];
            }
            ms.fill(S::zero());
            for &(j, zj) in &zrow {
                ms.axpy(zj, &pstar.column(j), S::one());
            }
            let mut fstar = hv[i];
            for &(j, zj) in &zrow {
                fstar += zj * ms[j];
            }

            let mut finf = S::zero();
            let mut finf_tol = S::zero();
            if diffuse {
                mi.fill(S::zero());
                for &(j, zj) in &zrow {
                    mi.axpy(zj, &pinf.column(j), S::one());
                }
                let mut scale = S::zero();
                for &(j, zj) in &zrow {
                    finf += zj * mi[j];
                    scale += zj.abs() * pinf_peak[j].sqrt();
                }
                finf_tol = S::lit(1e-9) * scale * scale;
            }

            if diffuse && finf > finf_tol {
                // K0 = M∞/F∞
                k0.copy_from(&mi);
                k0.unscale_mut(finf);
                a.axpy(v, &k0, S::one());
                // P* += K0 K0' F* - K0 M*' - M* K0'
                pstar.ger(fstar, &k0, &k0, S::one());
                pstar.ger(-S::one(), &k0, &ms, S::one());
                pstar.ger(-S::one(), &ms, &k0, S::one());
                // P∞ -= M∞ M∞' / F∞
                pinf.ger(-S::one() / finf, &mi, &mi, S::one());
            } else {
                let mut scale = hv[i].abs().sqrt();
                for &(j, zj) in &zrow {
                    scale += zj.abs() * pstar[(j, j)].abs().sqrt();
                }
                // below the rounding level of its own computation F* carries no information
                if !(fstar > S::lit(1e-13) * scale * scale) || !fstar.is_finite_value() {
                    return Err(Error::FilterDegenerate {
                        t,
                        reason: format!("innovation variance of series {i} is {}", fstar.to_f64_lossy()),
                    });
                }
                a.axpy(v / fstar, &ms, S::one());
                pstar.ger(-S::one() / fstar, &ms, &ms, S::one());
                if t >= burn_periods {
                    out.loglik -= half * (log2pi + fstar.ln() + v * v / fstar);
                    out.n_loglik_terms += 1;
                }
            }
        }
        symmetrize(&mut pstar);

        if diffuse {
            symmetrize(&mut pinf);
            let resolved = (0..m).all(|i| pinf[(i, i)].abs() <= S::lit(1e-9) * pinf_peak[i]);
            if resolved {
                pinf.fill(S::zero());
                diffuse = false;
            }
        }

        if opts.store {
            out.filtered_state.push(a.clone());
            out.filtered_cov.push(pstar.clone());
            out.observed.push(obs);
            out.diffuse_period.push(diffuse_at_start);
        }

        // prediction: a = T a, P = T P T' + RQR'
        a = sparse_mul_vec(&model.t_rows, &a);
        sparse_sandwich(&model.t_rows, &pstar, &mut work);
        pstar.copy_from(&work);
        pstar += &model.rqr;
        if diffuse {
            sparse_sandwich(&model.t_rows, &pinf, &mut work);
            pinf.copy_from(&work);
            for (i, peak) in pinf_peak.iter_mut().enumerate() {
                *peak = peak.max(pinf[(i, i)].abs());
            }
        }
    }
    if matches!(opts.diffuse, DiffuseMethod::LargeKappa(_)) {
        out.d_diffuse = burn_periods.min(n);
    }
    if !out.loglik.is_finite_value() {
        return Err(Error::FilterDegenerate { t: n.saturating_sub(1), reason: "non-finite log-likelihood".into() });
    }
    Ok(out)
}

/// `T x` for row-sparse `T`.
pub(crate) fn sparse_mul_vec<S: Scalar>(t_rows: &[Vec<(usize, S)>], x: &DVector<S>) -> DVector<S> {
    DVector::from_iterator(
        t_rows.len(),
        t_rows.iter().map(|row| row.iter().fold(S::zero(), |acc, &(j, v)| acc + v * x[j])),
    )
}

/// `out = T P T'` for row-sparse `T` and symmetric `P`.
pub(crate) fn sparse_sandwich<S: Scalar>(t_rows: &[Vec<(usize, S)>], p: &DMatrix<S>, out: &mut DMatrix<S>) {
    let m = t_rows.len();
    // W = P T' column by column: W[:, i] = Σ_j T[i,j] P[:, j]
    let mut w = DMatrix::<S>::zeros(m, m);
    for (i, row) in t_rows.iter().enumerate() {
        let mut col = w.column_mut(i);
        for &(j, v) in row {
            col.axpy(v, &p.column(j), S::one());
        }
    }
    // out[i, k] = Σ_j T[i,j] W[j, k]
    for k in 0..m {
        let wk = w.column(k);
        for (i, row) in t_rows.iter().enumerate() {
            out[(i, k)] = row.iter().fold(S::zero(), |acc, &(j, v)| acc + v * wk[j]);
        }
    }
    symmetrize(out);
}
