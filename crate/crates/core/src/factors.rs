//! Principal-component estimation of nonstationary factors and the two-step estimator.
//!
//! Factors are extracted from the first differences of the panel after
//! standardizing each differenced series, then cumulated. Loadings are reported
//! on the scale of the original series and the factor innovations have unit
//! sample variance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lf_model::ModelSpec;
use crate::panel::{Frequency, Panel};

/// Per-series scaling used before PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    /// Mean of `Δx_i`.
    pub diff_mean: DVector<f64>,
    /// Standard deviation of `Δx_i`.
    pub diff_sd: DVector<f64>,
    /// Mean of the levels `x_i`, removed before the measurement equation.
    pub level_mean: DVector<f64>,
}

/// Output of [`pca_nonstationary`].
#[derive(Debug, Clone)]
pub struct FactorDecomposition {
    /// `Λ̂`, `n × r`, on the scale of the series.
    pub loadings: DMatrix<f64>,
    /// Standardized loadings (per unit s.d. of `Δx_i`).
    pub std_loadings: DMatrix<f64>,
    /// `f̂`, `T × r`, cumulated from zero.
    pub factors: DMatrix<f64>,
    /// Variance of the level idiosyncratic component after removing a linear trend.
    pub idio_var: DVector<f64>,
    /// Variance of the differenced idiosyncratic component.
    pub idio_var_diff: DVector<f64>,
    pub scaling: Scaling,
    pub frequency: Frequency,
    /// Eigenvalues of the correlation matrix of `Δx` in decreasing order.
    pub eigenvalues: Vec<f64>,
}

impl FactorDecomposition {
    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    /// Levels centered by the scaling record, as fed to the measurement equation.
    pub fn center_levels(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..out.ncols() {
            let m = self.scaling.level_mean[j];
            out.column_mut(j).iter_mut().for_each(|v| *v -= m);
        }
        out
    }

    /// Idiosyncratic variances for the measurement equation: level variance for
    /// I(0) rows and differenced variance for I(1) rows.
    pub fn psi_for(&self, i1_mask: &[bool]) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| if i1_mask.get(i).copied().unwrap_or(false) { self.idio_var_diff[i] } else { self.idio_var[i] })
    }

    /// Re-expresses the decomposition on another sampling of the same series
    /// (for example monthly aggregates of a weekly-estimated panel): standardized
    /// loadings are kept, the scaling record, factors and `Ψ̂` are recomputed on `x`.
    pub fn rescale_to(&self, x: &Panel) -> Result<FactorDecomposition> {
        if x.nseries() != self.n() {
            return Err(Error::Data(format!("{} series, decomposition has {}", x.nseries(), self.n())));
        }
        let (z, scaling) = standardized_differences(x.values())?;
        let l = &self.std_loadings;
        let ltl = l.transpose() * l;
        let proj = ltl
            .try_inverse()
            .ok_or_else(|| Error::Estimation("standardized loadings are rank deficient".into()))?;
        let mut u = &z * l * proj;
        // unit innovation variance per factor on the new sampling
        let mut std_l = l.clone();
        for k in 0..u.ncols() {
            let sd = column_sd(&u.column(k).into_owned());
            if sd > 0.0 {
                u.column_mut(k).unscale_mut(sd);
                std_l.column_mut(k).scale_mut(sd);
            }
        }
        finish(x.values(), &z, u, std_l, scaling, x.frequency(), self.eigenvalues.clone())
    }
}

fn column_sd(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.mean();
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `(Δx - μ)/s` and the scaling record. Errors on missing cells or constant differences.
pub fn standardized_differences(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Scaling)> {
    let (t, n) = x.shape();
    if t < 3 {
        return Err(Error::Data(format!("{t} periods are too few for differenced PCA")));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("panel has a missing cell at row {}, column {}", pos % t, pos / t)));
    }
    let mut z = DMatrix::zeros(t - 1, n);
    let mut dm = DVector::zeros(n);
    let mut ds = DVector::zeros(n);
    let mut lm = DVector::zeros(n);
    for j in 0..n {
        let d = DVector::from_fn(t - 1, |s, _| x[(s + 1, j)] - x[(s, j)]);
        let m = d.mean();
        let sd = column_sd(&d);
        if !(sd > 0.0) {
            return Err(Error::Data(format!("series {j} has constant first differences")));
        }
        for s in 0..t - 1 {
            z[(s, j)] = (d[s] - m) / sd;
        }
        dm[j] = m;
        ds[j] = sd;
        lm[j] = x.column(j).mean();
    }
    Ok((z, Scaling { diff_mean: dm, diff_sd: ds, level_mean: lm }))
}

/// Eigen-decomposition of the sample correlation matrix of `z`, decreasing order.
fn sorted_eigen(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let tm1 = z.nrows() as f64;
    let s = (z.transpose() * z) / (tm1 - 1.0).max(1.0);
    let eig = s.symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = DMatrix::from_fn(z.ncols(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Residual variance of `y` after an OLS fit on intercept and linear trend.
fn detrended_variance(y: &DVector<f64>) -> f64 {
    let n = y.len();
    let nf = n as f64;
    let tbar = (nf - 1.0) / 2.0;
    let ybar = y.mean();
    let mut sty = 0.0;
    let mut stt = 0.0;
    for (s, v) in y.iter().enumerate() {
        let dt = s as f64 - tbar;
        sty += dt * (v - ybar);
        stt += dt * dt;
    }
    let b = if stt > 0.0 { sty / stt } else { 0.0 };
    let rss: f64 = y.iter().enumerate().map(|(s, v)| (v - ybar - b * (s as f64 - tbar)).powi(2)).sum();
    rss / (nf - 2.0).max(1.0)
}

fn finish(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    u: DMatrix<f64>,
    std_l: DMatrix<f64>,
    scaling: Scaling,
    frequency: Frequency,
    eigenvalues: Vec<f64>,
) -> Result<FactorDecomposition> {
    let (t, n) = x.shape();
    let r = u.ncols();
    let mut f = DMatrix::zeros(t, r);
    for k in 0..r {
        for s in 1..t {
            f[(s, k)] = f[(s - 1, k)] + u[(s - 1, k)];
        }
    }
    let loadings = DMatrix::from_fn(n, r, |i, k| scaling.diff_sd[i] * std_l[(i, k)]);
    let fit_diff = &u * std_l.transpose();
    let mut idio_var = DVector::zeros(n);
    let mut idio_var_diff = DVector::zeros(n);
    for i in 0..n {
        let s2 = scaling.diff_sd[i].powi(2);
        let floor = 1e-10 * s2;
        let e_d = DVector::from_fn(t - 1, |s, _| z[(s, i)] - fit_diff[(s, i)]);
        idio_var_diff[i] = (e_d.norm_squared() / (t as f64 - 2.0).max(1.0) * s2).max(floor);
        let lvl = DVector::from_fn(t, |s, _| {
            x[(s, i)] - (0..r).map(|k| loadings[(i, k)] * f[(s, k)]).sum::<f64>()
        });
        idio_var[i] = detrended_variance(&lvl).max(floor);
    }
    Ok(FactorDecomposition {
        loadings,
        std_loadings: std_l,
        factors: f,
        idio_var,
        idio_var_diff,
        scaling,
        frequency,
        eigenvalues,
    })
}

/// PCA on the standardized first differences of a complete panel.
pub fn pca_nonstationary(x: &Panel, r: usize) -> Result<FactorDecomposition> {
    let (t, n) = (x.nobs(), x.nseries());
    if r == 0 || r > n.min(t.saturating_sub(1)) {
        return Err(Error::Estimation(format!("cannot extract {r} factors from {n} series over {t} periods")));
    }
    let (z, scaling) = standardized_differences(x.values())?;
    let (vals, vecs) = sorted_eigen(&z);
    let top = vals[0].max(1e-300);
    if vals[r - 1] <= 1e-12 * top {
        return Err(Error::Estimation(format!("differenced panel has rank below {r}")));
    }
    let mut std_l = DMatrix::zeros(n, r);
    let mut u = DMatrix::zeros(t - 1, r);
    for k in 0..r {
        let mut v = vecs.column(k).into_owned();
        if let Some(first) = v.iter().find(|a| a.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        let sl = vals[k].sqrt();
        std_l.set_column(k, &(&v * sl));
        u.set_column(k, &(&z * &v / sl));
    }
    finish(x.values(), &z, u, std_l, scaling, x.frequency(), vals)
}

/// Bai–Ng `(IC1, IC2, IC3)` minimizers over `k = 0..=r_max` on the standardized differences.
pub fn ic_bai_ng(x: &Panel, r_max: usize) -> Result<(usize, usize, usize)> {
    if r_max == 0 {
        return Err(Error::Config("r_max must be at least 1".into()));
    }
    let (z, _) = standardized_differences(x.values())?;
    let (tt, n) = z.shape();
    let r_max = r_max.min(n).min(tt);
    let (vals, _) = sorted_eigen(&z);
    let nf = n as f64;
    let tf = tt as f64;
    // V(k) = (1/(nT)) ||Z - F_k Λ_k'||² with the (T-1)-divisor eigenvalues
    let total: f64 = vals.iter().sum();
    let scale = (tf - 1.0) / tf / nf;
    let c2 = nf.min(tf);
    let pen1 = (nf + tf) / (nf * tf) * (nf * tf / (nf + tf)).ln();
    let pen2 = (nf + tf) / (nf * tf) * c2.ln();
    let pen3 = c2.ln() / c2;
    let mut best = [(f64::INFINITY, 0usize); 3];
    let mut explained = 0.0;
    for k in 0..=r_max {
        if k > 0 {
            explained += vals[k - 1];
        }
        let v = ((total - explained).max(1e-300)) * scale;
        let lv = v.ln();
        for (b, pen) in best.iter_mut().zip([pen1, pen2, pen3]) {
            let ic = lv + k as f64 * pen;
            if ic < b.0 {
                *b = (ic, k);
            }
        }
    }
    Ok((best[0].1, best[1].1, best[2].1))
}

/// Options of [`two_step`].
#[derive(Debug, Clone, Default)]
pub struct TwoStepOptions {
    /// Panel on which `Λ̂` is estimated when it differs from the model panel
    /// (for example the weekly series behind monthly aggregates).
    pub estimation_panel: Option<Panel>,
    /// Idiosyncratic components to model as random walks.
    pub i1_idio_mask: Option<Vec<bool>>,
    pub include_cc: bool,
}

/// First step of the two-step estimator: `Λ̂` and `Ψ̂` for the model panel.
///
/// Returns the model spec (with the auxiliary block when `r > 0`) and the
/// decomposition on the model panel's sampling. For `r = 0` the decomposition is `None`.
pub fn two_step(x_model: &Panel, r: usize, opts: &TwoStepOptions) -> Result<(ModelSpec, Option<FactorDecomposition>)> {
    if r == 0 {
        let spec = if opts.include_cc { ModelSpec::with_cc() } else { ModelSpec::baseline() };
        return Ok((spec, None));
    }
    let dec = match &opts.estimation_panel {
        Some(est) => pca_nonstationary(est, r)?.rescale_to(x_model)?,
        None => pca_nonstationary(x_model, r)?,
    };
    let mask = opts.i1_idio_mask.clone().unwrap_or_else(|| vec![false; dec.n()]);
    if mask.len() != dec.n() {
        return Err(Error::Config(format!("I(1) mask has {} entries for {} series", mask.len(), dec.n())));
    }
    let psi = dec.psi_for(&mask);
    let mut spec = ModelSpec::with_gt(dec.loadings.clone(), psi, opts.include_cc);
    spec.i1_idio_mask = mask;
    Ok((spec, Some(dec)))
}

/// One EM-style update of `(Λ̂, Ψ̂)` given filtered factor levels `f_kf` (`T × r`).
pub fn em_iterate(dec: &FactorDecomposition, f_kf: &DMatrix<f64>, x: &Panel) -> Result<FactorDecomposition> {
    let (t, n) = (x.nobs(), x.nseries());
    let r = dec.r();
    if f_kf.nrows() != t || f_kf.ncols() != r || n != dec.n() {
        return Err(Error::Data("factor path and panel dimensions do not match the decomposition".into()));
    }
    let (z, scaling) = standardized_differences(x.values())?;
    let df = DMatrix::from_fn(t - 1, r, |s, k| f_kf[(s + 1, k)] - f_kf[(s, k)]);
    let mut dfc = df.clone();
    for k in 0..r {
        let m = dfc.column(k).mean();
        dfc.column_mut(k).iter_mut().for_each(|v| *v -= m);
    }
    let gram = dfc.transpose() * &dfc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Estimation("filtered factor increments are collinear".into()))?;
    // standardized coefficients: Z = ΔF B' + E
    let b = chol.solve(&(dfc.transpose() * &z)).transpose();
    finish(x.values(), &z, dfc, b, scaling, x.frequency(), dec.eigenvalues.clone())
}

/// One EM step for `(Λ, Ψ)` in the level measurement equation `x_t = Λ f_t + ε_t`
/// given smoothed factor means `f` (`T × r`) and covariances `p` (`r × r` each).
///
/// `x` is the centered level panel the model is fitted to. The factor path of the
/// returned decomposition is `f`; standardized loadings use the existing scaling record.
pub fn em_step_smoothed(dec: &FactorDecomposition, f: &DMatrix<f64>, p: &[DMatrix<f64>], x: &DMatrix<f64>) -> Result<FactorDecomposition> {
    let (t, n) = x.shape();
    let r = dec.r();
    if f.nrows() != t || f.ncols() != r || p.len() != t || n != dec.n() {
        return Err(Error::Data("smoothed moments and panel dimensions do not match the decomposition".into()));
    }
    let mut sff = f.transpose() * f;
    for pt in p {
        sff += pt;
    }
    let chol = sff
        .cholesky()
        .ok_or_else(|| Error::Estimation("smoothed factor moments are singular".into()))?;
    let loadings = chol.solve(&(f.transpose() * x)).transpose();
    let mut idio_var = DVector::zeros(n);
    for i in 0..n {
        let li = loadings.row(i).transpose();
        let mut acc = 0.0;
        for s in 0..t {
            let e = x[(s, i)] - f.row(s).transpose().dot(&li);
            acc += e * e + (li.transpose() * &p[s] * &li)[0];
        }
        idio_var[i] = (acc / t as f64).max(1e-10 * dec.scaling.diff_sd[i].powi(2));
    }
    let std_loadings = DMatrix::from_fn(n, r, |i, k| loadings[(i, k)] / dec.scaling.diff_sd[i]);
    Ok(FactorDecomposition {
        loadings,
        std_loadings,
        factors: f.clone(),
        idio_var,
        idio_var_diff: dec.idio_var_diff.clone(),
        scaling: dec.scaling.clone(),
        frequency: dec.frequency,
        eigenvalues: dec.eigenvalues.clone(),
    })
}
