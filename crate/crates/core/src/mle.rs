//! Maximum likelihood over transformed hyperparameters and likelihood-ratio tests.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::lf_model::{self, HyperParams, ModelSpec};
use crate::ssm::{collapse_rows, filter_with, FilterOptions, StateSpaceModel};

/// Map between a constrained parameter and the unconstrained optimizer coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Transform {
    Identity,
    /// Standard deviations: `u = ln σ`.
    Log,
    /// Correlations and AR coefficients in `(-1, 1)`: `u = atanh ρ`.
    Atanh,
}

const U_BOUND: f64 = 30.0;

impl Transform {
    pub fn to_free(self, x: f64) -> f64 {
        let u = match self {
            Transform::Identity => x,
            Transform::Log => x.max(1e-300).ln(),
            Transform::Atanh => x.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh(),
        };
        if self == Transform::Identity {
            u
        } else {
            u.clamp(-U_BOUND, U_BOUND)
        }
    }

    pub fn from_free(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.clamp(-U_BOUND, U_BOUND).exp(),
            Transform::Atanh => u.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub transform: Transform,
}

impl ParamSpec {
    pub fn new(name: &str, transform: Transform) -> Self {
        Self { name: name.to_string(), transform }
    }
}

/// A family of state-space models indexed by a parameter vector.
pub trait ParamModel: Sync {
    fn specs(&self) -> Vec<ParamSpec>;
    fn build(&self, values: &[f64]) -> Result<StateSpaceModel<f64>>;
    /// Rows with constant loadings and positive noise that may be collapsed during estimation.
    fn collapsible_rows(&self) -> Vec<usize> {
        Vec::new()
    }
}

/// Log-likelihood of `model` on `y`, collapsing `rows` when the block allows it.
///
/// The collapse offset is exact for every hyperparameter value, so using the
/// collapsed value inside the optimizer leaves the argmax unchanged.
pub fn collapsed_loglik(model: &StateSpaceModel<f64>, y: &DMatrix<f64>, rows: &[usize]) -> Result<f64> {
    if rows.len() > 1 {
        if let Ok(c) = collapse_rows(model, y, rows) {
            if c.data.ncols() < model.p() {
                let out = filter_with(&c.model, &c.data, FilterOptions::loglik_only())?;
                return Ok(out.loglik + c.loglik_offset);
            }
        }
    }
    Ok(filter_with(model, y, FilterOptions::loglik_only())?.loglik)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-5, rel_tol: 1e-9, fd_step: 1e-5 }
    }
}

/// Outcome of [`maximize`].
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn fd_gradient<F>(f: &F, x: &[f64], step: f64) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            match (f(&xp), f(&xm)) {
                (Some(a), Some(b)) => Some((a - b) / (2.0 * h)),
                (Some(a), None) => f(x).map(|c| (a - c) / h),
                (None, Some(b)) => f(x).map(|c| (c - b) / h),
                (None, None) => None,
            }
        })
        .collect()
}

/// BFGS maximization of `f` (returning `None` at infeasible points) with a
/// backtracking line search and finite-difference gradients.
pub fn maximize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x).ok_or_else(|| Error::Optimization("objective infeasible at the starting point".into()))?;
    if k == 0 {
        return Ok(OptimResult { x, value: fx, converged: true, iterations: 0, grad_norm: 0.0 });
    }
    let neg = |v: &[f64]| f(v).map(|y| -y);
    let mut g: Vec<f64> = fd_gradient(&neg, &x, opts.fd_step)
        .ok_or_else(|| Error::Optimization("gradient undefined at the starting point".into()))?;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut hinv = DMatrix::<f64>::identity(k, k);
    let mut fresh = true;
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        let gn = norm(&g);
        if gn < opts.grad_tol {
            converged = true;
            break;
        }
        iter += 1;
        let gv = DVector::from_column_slice(&g);
        let mut d = -(&hinv * &gv);
        if d.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(k, k);
            d = -gv.clone();
            fresh = true;
        }
        // first step after a reset is capped to unit length in the free coordinates
        if fresh {
            let dn = d.norm();
            if dn > 1.0 {
                d /= dn;
            }
        }
        let slope = d.dot(&gv);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            if let Some(fv) = f(&xn) {
                if -fv <= -fx + 1e-4 * step * slope {
                    accepted = Some((xn, fv));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            hinv = DMatrix::identity(k, k);
            fresh = true;
            continue;
        };
        let Some(gn_new) = fd_gradient(&neg, &xn, opts.fd_step) else {
            break;
        };
        let rel = (fnew - fx).abs() / fx.abs().max(1.0);
        let s = DVector::from_iterator(k, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(k, gn_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                // scale the initial inverse Hessian
                hinv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = xn;
        fx = fnew;
        g = gn_new;
        if rel < opts.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(OptimResult { grad_norm: norm(&g), x, value: fx, converged, iterations: iter })
}

/// Result of [`fit_model`].
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Parameters whose estimate sits at a numerical boundary.
    pub warnings: Vec<String>,
}

/// Maximizes the loglik of a [`ParamModel`]. Entries of `fixed` that are `Some`
/// are held at that value. The reported loglik is evaluated on the full model.
pub fn fit_model<M: ParamModel>(
    model: &M,
    y: &DMatrix<f64>,
    init: &[f64],
    fixed: &[Option<f64>],
    opts: &BfgsOptions,
) -> Result<ModelFit> {
    let specs = model.specs();
    if init.len() != specs.len() || fixed.len() != specs.len() {
        return Err(Error::Config(format!(
            "{} parameters, {} initial values, {} restriction slots",
            specs.len(),
            init.len(),
            fixed.len()
        )));
    }
    let rows = model.collapsible_rows();
    let free: Vec<usize> = (0..specs.len()).filter(|&i| fixed[i].is_none()).collect();
    let assemble = |u: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = (0..specs.len()).map(|i| fixed[i].unwrap_or(init[i])).collect();
        for (k, &i) in free.iter().enumerate() {
            v[i] = specs[i].transform.from_free(u[k]);
        }
        v
    };
    let objective = |u: &[f64]| -> Option<f64> {
        let v = assemble(u);
        let m = model.build(&v).ok()?;
        collapsed_loglik(&m, y, &rows).ok().filter(|l| l.is_finite())
    };
    let u0: Vec<f64> = free.iter().map(|&i| specs[i].transform.to_free(init[i])).collect();
    let mut res = maximize(&objective, &u0, opts)?;
    // The log-scale gradient of a vanishing standard deviation decays like σ², so
    // BFGS stalls short of zero. Jump such parameters to the bound when that helps.
    let mut jumped = res.x.clone();
    let mut best = res.value;
    for (k, &i) in free.iter().enumerate() {
        if specs[i].transform != Transform::Log {
            continue;
        }
        let mut trial = jumped.clone();
        trial[k] = -U_BOUND;
        if let Some(v) = objective(&trial) {
            if v > best {
                best = v;
                jumped = trial;
            }
        }
    }
    if best > res.value {
        res = maximize(&objective, &jumped, opts)?;
    }
    let values = assemble(&res.x);
    let full = model.build(&values)?;
    let loglik = filter_with(&full, y, FilterOptions::loglik_only())?.loglik;
    let mut warnings = Vec::new();
    for (k, &i) in free.iter().enumerate() {
        let u = res.x[k];
        match specs[i].transform {
            Transform::Atanh if values[i].abs() > 0.999 => {
                warnings.push(format!("{} = {:.6} is at the boundary of (-1, 1)", specs[i].name, values[i]))
            }
            Transform::Log if u <= -U_BOUND + 1.0 => {
                warnings.push(format!("{} converged to zero", specs[i].name))
            }
            _ => {}
        }
    }
    Ok(ModelFit {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        values,
        loglik,
        converged: res.converged,
        iterations: res.iterations,
        grad_norm: res.grad_norm,
        warnings,
    })
}

/// A labour-force model family with fixed structure and design standard errors.
#[derive(Debug, Clone)]
pub struct LfModel {
    pub spec: ModelSpec,
    pub c: DMatrix<f64>,
    /// Estimate `ρ_{CC,GT}` as well ("all correlations" variant).
    pub all_corr: bool,
}

impl ParamModel for LfModel {
    fn specs(&self) -> Vec<ParamSpec> {
        lf_model::param_specs(&self.spec, self.all_corr)
    }

    fn build(&self, values: &[f64]) -> Result<StateSpaceModel<f64>> {
        let hp = HyperParams::from_values(&self.spec, self.all_corr, values);
        lf_model::build(&self.spec, &hp, &self.c)
    }

    fn collapsible_rows(&self) -> Vec<usize> {
        let off = lf_model::N_WAVES + usize::from(self.spec.include_cc);
        (0..self.spec.n_gt()).filter(|&i| !self.spec.i1_idio_mask[i]).map(|i| off + i).collect()
    }
}

/// Maximum-likelihood estimate of a labour-force model.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub params: HyperParams,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub fn from_fit(spec: &ModelSpec, all_corr: bool, fit: ModelFit) -> Self {
        Self {
            params: HyperParams::from_values(spec, all_corr, &fit.values),
            names: fit.names,
            values: fit.values,
            loglik: fit.loglik,
            converged: fit.converged,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
            warnings: fit.warnings,
        }
    }

    /// `(name, value)` rows in the optimizer order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        self.names.iter().cloned().zip(self.values.iter().copied()).collect()
    }
}

/// Fits `model` on `y` (`T × p` in the column order of [`ModelSpec::p`]).
pub fn fit(model: &LfModel, y: &DMatrix<f64>, init: &HyperParams, opts: &BfgsOptions) -> Result<EstimationResult> {
    let v0 = init.to_values(&model.spec, model.all_corr);
    let fixed = vec![None; v0.len()];
    let f = fit_model(model, y, &v0, &fixed, opts)?;
    Ok(EstimationResult::from_fit(&model.spec, model.all_corr, f))
}

/// Moment-based starting values: slope and seasonal scales from differences of
/// the wave average, unit survey-error scales, zero correlations.
pub fn default_init(spec: &ModelSpec, y: &DMatrix<f64>) -> HyperParams {
    let sd_of = |x: &[f64]| -> f64 {
        let n = x.len() as f64;
        if x.len() < 2 {
            return 1.0;
        }
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        if v > 0.0 {
            v.sqrt()
        } else {
            1.0
        }
    };
    let diffs = |col: usize, order: usize| -> Vec<f64> {
        let mut x: Vec<f64> = (0..y.nrows()).map(|t| y[(t, col)]).collect();
        for _ in 0..order {
            x = x.windows(2).map(|w| w[1] - w[0]).collect();
        }
        x.into_iter().filter(|v| v.is_finite()).collect()
    };
    let d1 = sd_of(&diffs(0, 1));
    let d2 = sd_of(&diffs(0, 2));
    let cc = spec.include_cc.then(|| {
        let col = lf_model::N_WAVES;
        let e1 = sd_of(&diffs(col, 1));
        let e2 = sd_of(&diffs(col, 2));
        lf_model::CcParams { sigma_r: 0.3 * e2, sigma_omega: 0.05 * e1, sigma_eps: 0.3 * e1, rho: 0.0, sigma_l: 0.0 }
    });
    HyperParams {
        sigma_r_y: 0.3 * d2,
        sigma_omega_y: 0.05 * d1,
        sigma_lambda: 0.1 * d1,
        sigma_nu: [1.0; 5],
        delta: 0.2,
        sigma_l_y: 0.0,
        cc,
        rho_gt: vec![0.0; if spec.include_gt { spec.r } else { 0 }],
        rho_cc_gt: None,
        kappa: vec![0.0; spec.factor_lags],
    }
}

/// Correlation restriction tested by [`lr_test`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hypothesis {
    /// `ρ_CC = 0`
    RhoCc,
    /// `ρ_{m,GT} = 0` for one factor (1-based).
    RhoGt(usize),
    /// All `ρ_{m,GT} = 0`.
    RhoGtAll,
    /// Every correlation parameter is zero.
    RhoAll,
    /// `ρ_{m,CC,GT} = 0` for one factor (1-based).
    RhoCcGt(usize),
}

impl Hypothesis {
    pub fn label(&self) -> String {
        match self {
            Hypothesis::RhoCc => "rho_cc=0".into(),
            Hypothesis::RhoGt(m) => format!("rho_gt{m}=0"),
            Hypothesis::RhoGtAll => "rho_gt=0".into(),
            Hypothesis::RhoAll => "rho=0".into(),
            Hypothesis::RhoCcGt(m) => format!("rho_cc_gt{m}=0"),
        }
    }

    /// Parameter names restricted to zero.
    fn restricted(&self, names: &[String]) -> Vec<usize> {
        let pick = |pred: &dyn Fn(&str) -> bool| -> Vec<usize> {
            names.iter().enumerate().filter(|(_, n)| pred(n)).map(|(i, _)| i).collect()
        };
        match self {
            Hypothesis::RhoCc => pick(&|n| n == "rho_cc"),
            Hypothesis::RhoGt(m) => {
                let t = format!("rho_gt{m}");
                pick(&|n| n == t)
            }
            Hypothesis::RhoGtAll => pick(&|n| n.starts_with("rho_gt")),
            Hypothesis::RhoAll => pick(&|n| n.starts_with("rho")),
            Hypothesis::RhoCcGt(m) => {
                let t = format!("rho_cc_gt{m}");
                pick(&|n| n == t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LRTestResult {
    pub hypothesis: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub loglik_restricted: f64,
    pub loglik_unrestricted: f64,
}

/// `LR = -2(L_R - L)`, clipped at zero, with a `χ²_df` p-value.
pub fn lr_from_logliks(label: &str, l_r: f64, l: f64, df: usize) -> Result<LRTestResult> {
    if l_r > l + 1e-4 {
        return Err(Error::Optimization(format!(
            "restricted loglik {l_r} exceeds unrestricted {l}; refit the unrestricted model"
        )));
    }
    let stat = (-2.0 * (l_r - l)).max(0.0);
    let p = if df == 0 || stat == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::Test(e.to_string()))?;
        (1.0 - chi.cdf(stat)).clamp(0.0, 1.0)
    };
    Ok(LRTestResult {
        hypothesis: label.to_string(),
        statistic: stat,
        df,
        p_value: p,
        loglik_restricted: l_r,
        loglik_unrestricted: l,
    })
}

/// Fits the restricted model starting from the unrestricted optimum and tests.
pub fn lr_test_from_fit<M: ParamModel>(
    model: &M,
    y: &DMatrix<f64>,
    unrestricted: &ModelFit,
    restricted_idx: &[usize],
    label: &str,
    opts: &BfgsOptions,
) -> Result<(LRTestResult, ModelFit)> {
    if restricted_idx.is_empty() {
        return Err(Error::Config(format!("hypothesis {label} restricts no parameter of this model")));
    }
    let mut fixed = vec![None; unrestricted.values.len()];
    for &i in restricted_idx {
        fixed[i] = Some(0.0);
    }
    let r = fit_model(model, y, &unrestricted.values, &fixed, opts)?;
    let test = lr_from_logliks(label, r.loglik, unrestricted.loglik, restricted_idx.len())?;
    Ok((test, r))
}

/// Likelihood-ratio test of a correlation restriction in a labour-force model.
pub fn lr_test(
    model: &LfModel,
    y: &DMatrix<f64>,
    init: &HyperParams,
    hypothesis: &Hypothesis,
    opts: &BfgsOptions,
) -> Result<LRTestResult> {
    let v0 = init.to_values(&model.spec, model.all_corr);
    let names: Vec<String> = model.specs().into_iter().map(|s| s.name).collect();
    let idx = hypothesis.restricted(&names);
    let fixed = vec![None; v0.len()];
    let unres = fit_model(model, y, &v0, &fixed, opts)?;
    let (test, _) = lr_test_from_fit(model, y, &unres, &idx, &hypothesis.label(), opts)?;
    Ok(test)
}
