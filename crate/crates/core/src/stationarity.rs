//! Augmented Dickey–Fuller tests and FDR-controlled panel screening with a
//! moving-block bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Deterministic terms in the ADF regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Deterministics {
    None,
    Const,
    ConstTrend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfOptions {
    pub deterministics: Deterministics,
    /// Largest lag considered by BIC; `None` uses `⌈12 (T/100)^{1/4}⌉`.
    pub max_lag: Option<usize>,
    /// GLS-detrend before testing (Elliott–Rothenberg–Stock).
    pub gls: bool,
}

impl AdfOptions {
    pub fn new(deterministics: Deterministics) -> Self {
        Self { deterministics, max_lag: None, gls: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfResult {
    pub stat: f64,
    pub p_value: f64,
    pub lags: usize,
    pub nobs: usize,
}

// MacKinnon (1994) response-surface coefficients for one series:
// (tau_star, tau_min, tau_max, small-p quadratic, large-p cubic), ascending powers.
struct Surface {
    star: f64,
    min: f64,
    max: f64,
    small: [f64; 3],
    large: [f64; 4],
}

const SURF_N: Surface = Surface {
    star: -1.04,
    min: -19.04,
    max: f64::INFINITY,
    small: [0.6344, 1.2378, 0.032496],
    large: [0.4797, 0.93557, -0.06999, 0.033066],
};
const SURF_C: Surface = Surface {
    star: -1.61,
    min: -18.83,
    max: 2.74,
    small: [2.1659, 1.4412, 0.038269],
    large: [1.7339, 0.93202, -0.12745, -0.010368],
};
const SURF_CT: Surface = Surface {
    star: -2.89,
    min: -16.18,
    max: 0.7,
    small: [3.2512, 1.6047, 0.049588],
    large: [2.5261, 0.61654, -0.37956, -0.060285],
};

/// Asymptotic p-value of a Dickey–Fuller t statistic.
pub fn mackinnon_p(stat: f64, det: Deterministics) -> f64 {
    let s = match det {
        Deterministics::None => &SURF_N,
        Deterministics::Const => &SURF_C,
        Deterministics::ConstTrend => &SURF_CT,
    };
    if stat > s.max {
        return 1.0;
    }
    if stat < s.min {
        return 0.0;
    }
    let z = if stat <= s.star {
        s.small[0] + s.small[1] * stat + s.small[2] * stat * stat
    } else {
        s.large[0] + s.large[1] * stat + s.large[2] * stat * stat + s.large[3] * stat.powi(3)
    };
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

/// Default maximum lag `⌈12 (T/100)^{1/4}⌉`, capped by the sample.
pub fn schwert_max_lag(nobs: usize, det: Deterministics) -> usize {
    let ntrend = match det {
        Deterministics::None => 0,
        Deterministics::Const => 1,
        Deterministics::ConstTrend => 2,
    };
    let m = (12.0 * (nobs as f64 / 100.0).powf(0.25)).ceil() as usize;
    m.min((nobs / 2).saturating_sub(ntrend + 1))
}

struct Ols {
    rss: f64,
    t_first: f64,
    nobs: usize,
    k: usize,
}

/// OLS of `y` on the columns of `x`; `t_first` is the t-ratio of column 0.
fn ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Option<Ols> {
    let (n, k) = x.shape();
    if n <= k {
        return None;
    }
    let xtx = x.transpose() * x;
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let s2 = rss / (n - k) as f64;
    let inv00 = chol.solve(&DVector::from_fn(k, |i, _| if i == 0 { 1.0 } else { 0.0 }))[0];
    let se = (s2 * inv00).sqrt();
    if !(se > 0.0) {
        return None;
    }
    Some(Ols { rss, t_first: beta[0] / se, nobs: n, k })
}

/// Regressors `[x_{t-1}, Δx_{t-1..t-p}, 1, t]` over `t = start..T` (zero-based in Δx).
fn adf_design(x: &[f64], p: usize, start: usize, det: Deterministics) -> (DVector<f64>, DMatrix<f64>) {
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let rows = dx.len() - start;
    let extra = match det {
        Deterministics::None => 0,
        Deterministics::Const => 1,
        Deterministics::ConstTrend => 2,
    };
    let k = 1 + p + extra;
    let y = DVector::from_fn(rows, |r, _| dx[start + r]);
    let xm = DMatrix::from_fn(rows, k, |r, c| {
        let t = start + r;
        if c == 0 {
            x[t]
        } else if c <= p {
            dx[t - c]
        } else if c == p + 1 {
            1.0
        } else {
            (t + 1) as f64
        }
    });
    (y, xm)
}

fn gls_detrend(x: &[f64], det: Deterministics) -> Vec<f64> {
    let n = x.len();
    let cbar = if det == Deterministics::ConstTrend { -13.5 } else { -7.0 };
    let a = 1.0 + cbar / n as f64;
    let k = if det == Deterministics::ConstTrend { 2 } else { 1 };
    let zrow = |t: usize| -> [f64; 2] { [1.0, (t + 1) as f64] };
    let yq = DVector::from_fn(n, |t, _| if t == 0 { x[0] } else { x[t] - a * x[t - 1] });
    let zq = DMatrix::from_fn(n, k, |t, c| if t == 0 { zrow(0)[c] } else { zrow(t)[c] - a * zrow(t - 1)[c] });
    let beta = (zq.transpose() * &zq)
        .cholesky()
        .map(|ch| ch.solve(&(zq.transpose() * &yq)))
        .unwrap_or_else(|| DVector::zeros(k));
    (0..n).map(|t| x[t] - (0..k).map(|c| zrow(t)[c] * beta[c]).sum::<f64>()).collect()
}

/// ADF test with BIC lag selection on a common sample, refitted on the full sample.
pub fn adf_test(x: &[f64], opts: &AdfOptions) -> Result<AdfResult> {
    if x.len() < 20 {
        return Err(Error::Test(format!("ADF needs at least 20 observations, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Test("ADF input has missing values".into()));
    }
    let first = x[0];
    if x.iter().all(|v| (v - first).abs() <= 1e-12 * first.abs().max(1.0)) {
        return Err(Error::Test("ADF input is constant".into()));
    }
    let (series, det) = if opts.gls {
        (gls_detrend(x, opts.deterministics), Deterministics::None)
    } else {
        (x.to_vec(), opts.deterministics)
    };
    let nobs = series.len() - 1;
    let max_lag = opts.max_lag.unwrap_or_else(|| schwert_max_lag(nobs, det)).min(nobs / 2);
    let mut best = (f64::INFINITY, 0usize);
    for p in 0..=max_lag {
        let (y, xm) = adf_design(&series, p, max_lag, det);
        if let Some(fit) = ols(&y, &xm) {
            let n = fit.nobs as f64;
            let bic = n * (fit.rss / n).ln() + fit.k as f64 * n.ln();
            if bic < best.0 {
                best = (bic, p);
            }
        }
    }
    adf_fixed_lag(&series, best.1, det, opts.deterministics)
}

/// ADF statistic with a fixed lag order on the maximal sample. `table` picks the p-value surface.
fn adf_fixed_lag(x: &[f64], p: usize, det: Deterministics, table: Deterministics) -> Result<AdfResult> {
    let (y, xm) = adf_design(x, p, p, det);
    let fit = ols(&y, &xm).ok_or_else(|| Error::Test("singular ADF regression".into()))?;
    Ok(AdfResult { stat: fit.t_first, p_value: mackinnon_p(fit.t_first, table), lags: p, nobs: fit.nobs })
}

/// Benjamini–Hochberg step-up: `true` where the hypothesis is rejected.
pub fn benjamini_hochberg(p: &[f64], level: f64) -> Vec<bool> {
    let n = p.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut k_max = 0;
    for (rank, &i) in idx.iter().enumerate() {
        if p[i] <= (rank + 1) as f64 / n as f64 * level {
            k_max = rank + 1;
        }
    }
    let mut out = vec![false; n];
    for &i in idx.iter().take(k_max) {
        out[i] = true;
    }
    out
}

/// Per-series ADF results and the FDR decision.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRootReport {
    pub names: Vec<String>,
    pub stats: Vec<f64>,
    /// Asymptotic (MacKinnon) p-values.
    pub p_asymptotic: Vec<f64>,
    /// Bootstrap p-values used for the FDR decision.
    pub p_values: Vec<f64>,
    pub lags: Vec<usize>,
    /// `true` where the unit root is rejected (series classified I(0)).
    pub rejected: Vec<bool>,
    pub level: f64,
    pub block_len: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl UnitRootReport {
    /// Indices of series not rejected, i.e. classified I(1).
    pub fn integrated(&self) -> Vec<usize> {
        (0..self.rejected.len()).filter(|&i| !self.rejected[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub level: f64,
    /// `None` uses `⌈T^{1/3}⌉`.
    pub block_len: Option<usize>,
    pub n_boot: usize,
    pub seed: u64,
    pub adf: AdfOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            level: 0.05,
            block_len: None,
            n_boot: 999,
            seed: 0,
            adf: AdfOptions::new(Deterministics::ConstTrend),
        }
    }
}

/// Default block length `⌈T^{1/3}⌉`.
pub fn default_block_len(t: usize) -> usize {
    (t as f64).cbrt().ceil() as usize
}

/// Moving-block bootstrap of the ADF null distribution for every series, with
/// Benjamini–Hochberg selection at `opts.level`.
///
/// Blocks of whole cross-sections of the centered first differences are drawn
/// with replacement and cumulated, which imposes the unit root while keeping
/// the temporal and cross-sectional dependence inside each block.
pub fn fdr_block_bootstrap(panel: &Panel, opts: &BootstrapOptions) -> Result<UnitRootReport> {
    let (t, n) = (panel.nobs(), panel.nseries());
    if !panel.is_complete() {
        return Err(Error::Data("unit-root screening needs a complete panel".into()));
    }
    let b = opts.block_len.unwrap_or_else(|| default_block_len(t));
    if b == 0 || b >= t - 1 {
        return Err(Error::Config(format!("block length {b} must be in 1..{}", t - 1)));
    }
    if opts.n_boot == 0 {
        return Err(Error::Config("n_boot must be positive".into()));
    }
    let x = panel.values();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| x.column(j).iter().copied().collect()).collect();
    let base: Vec<AdfResult> = cols.iter().map(|c| adf_test(c, &opts.adf)).collect::<Result<_>>()?;
    let det = if opts.adf.gls { Deterministics::None } else { opts.adf.deterministics };
    let prep: Vec<Vec<f64>> = if opts.adf.gls {
        cols.iter().map(|c| gls_detrend(c, opts.adf.deterministics)).collect()
    } else {
        cols.clone()
    };
    // centered differences of the series actually tested
    let nd = t - 1;
    let d: Vec<Vec<f64>> = prep
        .iter()
        .map(|c| {
            let dx: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
            let m = dx.iter().sum::<f64>() / nd as f64;
            dx.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let starts_max = nd - b;
    let counts: Vec<Vec<usize>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(rep as u64 + 1);
            let mut idx = Vec::with_capacity(nd);
            while idx.len() < nd {
                let s = rng.gen_range(0..=starts_max);
                idx.extend((s..s + b).take(nd - idx.len()));
            }
            (0..n)
                .map(|j| {
                    let mut xs = Vec::with_capacity(t);
                    xs.push(prep[j][0]);
                    for &k in &idx {
                        let last = *xs.last().unwrap();
                        xs.push(last + d[j][k]);
                    }
                    match adf_fixed_lag(&xs, base[j].lags, det, opts.adf.deterministics) {
                        Ok(r) if r.stat <= base[j].stat => 1,
                        _ => 0,
                    }
                })
                .collect()
        })
        .collect();
    let p_values: Vec<f64> = (0..n)
        .map(|j| (1 + counts.iter().map(|c| c[j]).sum::<usize>()) as f64 / (opts.n_boot + 1) as f64)
        .collect();
    let rejected = benjamini_hochberg(&p_values, opts.level);
    Ok(UnitRootReport {
        names: panel.names().to_vec(),
        stats: base.iter().map(|r| r.stat).collect(),
        p_asymptotic: base.iter().map(|r| r.p_value).collect(),
        p_values,
        lags: base.iter().map(|r| r.lags).collect(),
        rejected,
        level: opts.level,
        block_len: b,
        n_boot: opts.n_boot,
        seed: opts.seed,
    })
}

/// Classifies idiosyncratic components as I(1) (`true`) with an ADF test without
/// deterministics and Benjamini–Hochberg control at `level`.
pub fn idiosyncratic_i1_mask(residuals: &DMatrix<f64>, level: f64) -> Result<Vec<bool>> {
    let opts = AdfOptions::new(Deterministics::None);
    let p: Vec<f64> = (0..residuals.ncols())
        .map(|j| {
            let c: Vec<f64> = residuals.column(j).iter().copied().collect();
            adf_test(&c, &opts).map(|r| r.p_value)
        })
        .collect::<Result<_>>()?;
    Ok(benjamini_hochberg(&p, level).into_iter().map(|r| !r).collect())
}
