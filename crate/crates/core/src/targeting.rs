//! Elastic-net targeting of an auxiliary panel.
//!
//! Minimizes `(1/2T)‖y − Xβ‖² + λ[(1−α)½‖β‖² + α‖β‖₁]` by cyclic coordinate
//! descent on centered `y` and standardized columns of `X`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::Panel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticNetOptions {
    /// Stop when a full sweep lowers the objective by less than this (relative to `½ var(y)`).
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ElasticNetOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 100_000 }
    }
}

/// Column centering and scaling applied before the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_mean: DVector<f64>,
    /// Population (`1/T`) standard deviations; zero for constant columns.
    pub x_sd: DVector<f64>,
    pub y_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ElasticNetFit {
    /// Coefficients on the original scale of `X`.
    pub beta: DVector<f64>,
    /// Coefficients on the standardized columns.
    pub beta_std: DVector<f64>,
    pub intercept: f64,
    /// Objective after each sweep, on the standardized problem.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub standardization: Standardization,
}

impl ElasticNetFit {
    pub fn support(&self) -> Vec<usize> {
        self.beta_std.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }
}

struct Standardized {
    y: DVector<f64>,
    x: DMatrix<f64>,
    scaling: Standardization,
}

fn standardize(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<Standardized> {
    let (t, p) = x.shape();
    if y.len() != t {
        return Err(Error::Config(format!("y has {} observations, X has {t} rows", y.len())));
    }
    if t < 2 {
        return Err(Error::Data("elastic net needs at least two observations".into()));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("elastic net inputs must be complete and finite".into()));
    }
    let tf = t as f64;
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let mut xs = x.clone();
    let mut x_mean = DVector::zeros(p);
    let mut x_sd = DVector::zeros(p);
    for j in 0..p {
        let m = x.column(j).mean();
        let sd = (x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / tf).sqrt();
        x_mean[j] = m;
        let scale = if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 0.0 };
        x_sd[j] = scale;
        for s in 0..t {
            xs[(s, j)] = if scale > 0.0 { (x[(s, j)] - m) / scale } else { 0.0 };
        }
    }
    Ok(Standardized { y: yc, x: xs, scaling: Standardization { x_mean, x_sd, y_mean } })
}

fn soft(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

fn objective(r: &DVector<f64>, beta: &DVector<f64>, lambda: f64, alpha: f64) -> f64 {
    let t = r.len() as f64;
    let pen = if lambda == 0.0 {
        0.0
    } else {
        lambda * ((1.0 - alpha) * 0.5 * beta.norm_squared() + alpha * beta.iter().map(|b| b.abs()).sum::<f64>())
    };
    r.norm_squared() / (2.0 * t) + pen
}

fn coordinate_descent(
    s: &Standardized,
    lambda: f64,
    alpha: f64,
    warm: Option<&DVector<f64>>,
    opts: &ElasticNetOptions,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let (t, p) = s.x.shape();
    let tf = t as f64;
    let mut beta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    if lambda.is_infinite() {
        return Ok((DVector::zeros(p), vec![s.y.norm_squared() / (2.0 * tf)]));
    }
    let mut r = &s.y - &s.x * &beta;
    let mut trace = vec![objective(&r, &beta, lambda, alpha)];
    let scale = (s.y.norm_squared() / (2.0 * tf)).max(1e-300);
    let l1 = lambda * alpha;
    let denom = 1.0 + lambda * (1.0 - alpha);
    for _ in 0..opts.max_sweeps {
        for j in 0..p {
            if s.scaling.x_sd[j] == 0.0 {
                continue;
            }
            let col = s.x.column(j);
            let old = beta[j];
            let z = col.dot(&r) / tf + old;
            let new = soft(z, l1) / denom;
            if new != old {
                r.axpy(old - new, &col, 1.0);
                beta[j] = new;
            }
        }
        let obj = objective(&r, &beta, lambda, alpha);
        let prev = *trace.last().unwrap_or(&obj);
        trace.push(obj);
        if (prev - obj) / scale < opts.tol {
            return Ok((beta, trace));
        }
    }
    Err(Error::Optimization(format!(
        "coordinate descent did not converge in {} sweeps (lambda={lambda}, alpha={alpha})",
        opts.max_sweeps
    )))
}

fn finish_fit(s: Standardized, beta_std: DVector<f64>, trace: Vec<f64>) -> ElasticNetFit {
    let p = beta_std.len();
    let beta = DVector::from_fn(p, |j, _| if s.scaling.x_sd[j] > 0.0 { beta_std[j] / s.scaling.x_sd[j] } else { 0.0 });
    let intercept = s.scaling.y_mean - beta.dot(&s.scaling.x_mean);
    ElasticNetFit { beta, beta_std, intercept, sweeps: trace.len() - 1, objective_trace: trace, standardization: s.scaling }
}

/// Elastic-net fit at one `(λ, α)`; `λ = ∞` gives the intercept-only model.
pub fn elastic_net(y: &DVector<f64>, x: &DMatrix<f64>, lambda: f64, alpha: f64, opts: &ElasticNetOptions) -> Result<ElasticNetFit> {
    check_tuning(lambda, alpha)?;
    let s = standardize(y, x)?;
    let (beta, trace) = coordinate_descent(&s, lambda, alpha, None, opts)?;
    Ok(finish_fit(s, beta, trace))
}

fn check_tuning(lambda: f64, alpha: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda = {lambda} must be nonnegative")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha = {alpha} must lie in [0, 1]")));
    }
    Ok(())
}

/// Smallest `λ` at which every standardized coefficient is zero for mixing `α > 0`.
fn lambda_max(s: &Standardized, alpha: f64) -> f64 {
    let t = s.y.len() as f64;
    let g = (s.x.transpose() * &s.y).amax() / t;
    g / alpha.max(1e-3)
}

/// Tuning grid for [`target_panel`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetingGrid {
    pub alphas: Vec<f64>,
    /// Explicit `λ` values shared by every `α`; otherwise a log grid from `λ_max(α)`.
    pub lambdas: Option<Vec<f64>>,
    pub n_lambda: usize,
    /// Decades spanned by the automatic grid.
    pub decades: f64,
}

impl Default for TargetingGrid {
    fn default() -> Self {
        Self { alphas: (1..=10).map(|k| k as f64 / 10.0).collect(), lambdas: None, n_lambda: 50, decades: 4.0 }
    }
}

impl TargetingGrid {
    fn lambdas_for(&self, s: &Standardized, alpha: f64) -> Vec<f64> {
        if let Some(l) = &self.lambdas {
            let mut l = l.clone();
            l.sort_by(|a, b| b.total_cmp(a));
            return l;
        }
        let top = lambda_max(s, alpha);
        if self.n_lambda == 1 {
            return vec![top];
        }
        (0..self.n_lambda)
            .map(|k| top * 10f64.powf(-self.decades * k as f64 / (self.n_lambda - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TargetingResult {
    /// Column indices with nonzero coefficients.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub bic: f64,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
}

/// `T log(RSS/T) + df log T`.
pub fn bic(rss: f64, t: usize, df: usize) -> f64 {
    let tf = t as f64;
    tf * (rss.max(1e-300) / tf).ln() + df as f64 * tf.ln()
}

/// Regresses the differenced slope estimate on the differenced panel and keeps the
/// series with nonzero coefficients at the BIC-minimizing `(λ, α)`.
///
/// `slope` and `x` are levels over the same periods. Ties keep the first grid point
/// in `α`-then-decreasing-`λ` order.
pub fn target_panel(slope: &[f64], x: &Panel, grid: &TargetingGrid, opts: &ElasticNetOptions) -> Result<TargetingResult> {
    if grid.alphas.is_empty() || grid.lambdas.as_ref().is_some_and(|l| l.is_empty()) || (grid.lambdas.is_none() && grid.n_lambda == 0) {
        return Err(Error::Config("targeting grid is empty".into()));
    }
    for &a in &grid.alphas {
        check_tuning(0.0, a)?;
    }
    if let Some(l) = &grid.lambdas {
        for &v in l {
            check_tuning(v, 0.5)?;
        }
    }
    let t = x.nobs();
    if slope.len() != t {
        return Err(Error::Config(format!("slope has {} periods, panel has {t}", slope.len())));
    }
    let dy = DVector::from_iterator(t - 1, slope.windows(2).map(|w| w[1] - w[0]));
    let dx = x.diff().into_values();
    let s = standardize(&dy, &dx)?;
    let n = dy.len();

    let per_alpha: Vec<Result<(f64, f64, f64, DVector<f64>)>> = grid
        .alphas
        .par_iter()
        .map(|&alpha| {
            let mut warm: Option<DVector<f64>> = None;
            let mut best: Option<(f64, f64, f64, DVector<f64>)> = None;
            for lambda in grid.lambdas_for(&s, alpha) {
                let (beta, _) = coordinate_descent(&s, lambda, alpha, warm.as_ref(), opts)?;
                let r = &s.y - &s.x * &beta;
                let df = beta.iter().filter(|b| **b != 0.0).count();
                let b = bic(r.norm_squared(), n, df);
                if best.as_ref().map_or(true, |x| b < x.0) {
                    best = Some((b, lambda, alpha, beta.clone()));
                }
                if lambda.is_finite() {
                    warm = Some(beta);
                }
            }
            best.ok_or_else(|| Error::Config("targeting grid is empty".into()))
        })
        .collect();
    let mut best: Option<(f64, f64, f64, DVector<f64>)> = None;
    for r in per_alpha {
        let r = r?;
        if best.as_ref().map_or(true, |b| r.0 < b.0) {
            best = Some(r);
        }
    }
    let (b, lambda, alpha, beta_std) = best.ok_or_else(|| Error::Config("targeting grid is empty".into()))?;
    let fit = finish_fit(s, beta_std, vec![0.0]);
    let selected = fit.support();
    Ok(TargetingResult {
        selected_names: selected.iter().map(|&j| x.names()[j].clone()).collect(),
        selected,
        beta: fit.beta.iter().copied().collect(),
        lambda,
        alpha,
        bic: b,
        x_mean: fit.standardization.x_mean.iter().copied().collect(),
        x_sd: fit.standardization.x_sd.iter().copied().collect(),
    })
}
