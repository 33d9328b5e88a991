//! Monte Carlo study of the smooth-trend model with a correlated auxiliary factor.
//!
//! ```text
//! y_t = L_t + ε_t^y,               x_t = Λ f_t + ε_t^x
//! L_t = L_{t-1} + R_{t-1}
//! (R_t, f_t) = (R_{t-1}, f_{t-1}) + (η_t, u_t),   corr(η_t, u_t) = ρ
//! ```
//!
//! Replications use common random numbers: the draws behind `η`, `ε^y` and the
//! factor's own shock do not depend on `ρ` or the regime, so `y` is identical
//! across the whole grid and the no-auxiliary benchmark is fitted once per
//! replication.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::factors::pca_nonstationary;
use crate::mle::{fit_model, lr_from_logliks, BfgsOptions, ParamModel, ParamSpec, Transform};
use crate::panel::{Frequency, Panel};
use crate::ssm::{filter_with, FilterOptions, Initialization, Measurement, StateSpaceModel};

/// Distribution of the idiosyncratic components and loadings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Regime {
    /// `ε ~ N(0, 0.5)`, `Λ ~ U(0,1)`.
    HomoskedasticDense,
    /// As above with the first half of the loadings set to zero.
    HomoskedasticSparse,
    /// `ε_i ~ N(0, H_i)`, `H_i ~ U(0.5, 10)`.
    HeteroskedasticDense,
    /// Gaussian components, nowcast in the last period only.
    Gaussian,
    /// Centered unit exponential scaled to variance 0.5.
    Exponential,
    /// `t_4` scaled to variance 0.5.
    StudentT4,
}

/// Out-of-sample design of a regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Concurrent nowcasts over the final third of the sample.
    FinalThird,
    /// A single nowcast in the last period.
    LastPeriod,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::HomoskedasticDense,
        Regime::HomoskedasticSparse,
        Regime::HeteroskedasticDense,
        Regime::Gaussian,
        Regime::Exponential,
        Regime::StudentT4,
    ];

    pub fn schedule(self) -> Schedule {
        match self {
            Regime::HomoskedasticDense | Regime::HomoskedasticSparse | Regime::HeteroskedasticDense => {
                Schedule::FinalThird
            }
            Regime::Gaussian | Regime::Exponential | Regime::StudentT4 => Schedule::LastPeriod,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::HomoskedasticDense => "homoskedastic-dense",
            Regime::HomoskedasticSparse => "homoskedastic-sparse",
            Regime::HeteroskedasticDense => "heteroskedastic-dense",
            Regime::Gaussian => "gaussian",
            Regime::Exponential => "exponential",
            Regime::StudentT4 => "t4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub t: usize,
    pub n: usize,
    pub rho: f64,
    pub regime: Regime,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(rho: f64, regime: Regime, seed: u64) -> Self {
        Self { t: 150, n: 100, rho, regime, seed }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Parameter(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        if self.t < 10 || self.n == 0 {
            return Err(Error::Config(format!("T = {} and n = {} are too small", self.t, self.n)));
        }
        Ok(())
    }
}

/// One simulated data set with its latent truth.
#[derive(Debug, Clone)]
pub struct DgpDraw {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub level: DVector<f64>,
    pub slope: DVector<f64>,
    pub factor: DVector<f64>,
    pub slope_shock: DVector<f64>,
    pub factor_shock: DVector<f64>,
    pub lambda: DVector<f64>,
    pub idio_var: DVector<f64>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `(y, X)` and the true states.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<DgpDraw> {
    spec.validate()?;
    let (t, n, rho) = (spec.t, spec.n, spec.rho);
    let eta = normals(&mut stream(spec.seed, 1), t);
    let xi = normals(&mut stream(spec.seed, 2), t);
    let ey = normals(&mut stream(spec.seed, 3), t);
    let c = (1.0 - rho * rho).sqrt();
    let u: Vec<f64> = eta.iter().zip(&xi).map(|(e, x)| rho * e + c * x).collect();

    let mut level = DVector::zeros(t);
    let mut slope = DVector::zeros(t);
    let mut factor = DVector::zeros(t);
    let (mut l, mut r, mut f) = (0.0, 0.0, 0.0);
    for s in 0..t {
        l += r;
        r += eta[s];
        f += u[s];
        level[s] = l;
        slope[s] = r;
        factor[s] = f;
    }
    let half = 0.5f64.sqrt();
    let y = DVector::from_fn(t, |s, _| level[s] + half * ey[s]);

    let mut lrng = stream(spec.seed, 4);
    let lambda = DVector::from_fn(n, |i, _| {
        let v: f64 = lrng.gen();
        if spec.regime == Regime::HomoskedasticSparse && i < n / 2 {
            0.0
        } else {
            v
        }
    });
    let mut hrng = stream(spec.seed, 5);
    let idio_var: DVector<f64> = DVector::from_fn(n, |_, _| {
        if spec.regime == Regime::HeteroskedasticDense {
            hrng.gen_range(0.5..10.0)
        } else {
            0.5
        }
    });
    let mut erng = stream(spec.seed, 6);
    let t4 = StudentT::new(4.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut x = DMatrix::zeros(t, n);
    for s in 0..t {
        for i in 0..n {
            let e = match spec.regime {
                Regime::Exponential => {
                    let v: f64 = Exp1.sample(&mut erng);
                    (v - 1.0) * half
                }
                // Var t_4 = 2
                Regime::StudentT4 => t4.sample(&mut erng) * 0.5,
                _ => {
                    let z: f64 = StandardNormal.sample(&mut erng);
                    idio_var[i].sqrt() * z
                }
            };
            x[(s, i)] = lambda[i] * factor[s] + e;
        }
    }
    Ok(DgpDraw {
        y,
        x,
        level,
        slope,
        factor,
        slope_shock: DVector::from_vec(eta),
        factor_shock: DVector::from_vec(u),
        lambda,
        idio_var,
    })
}

/// Smooth-trend model for `y` alone (`aux = None`) or with one collapsed
/// auxiliary row `w_t = s f_t + N(0,1)`.
///
/// Parameters: `sigma_R`, `sigma_y` and, with the auxiliary row, `rho`.
#[derive(Debug, Clone)]
pub struct TrendModel {
    /// Loading `s` of the collapsed auxiliary row.
    pub aux: Option<f64>,
}

impl TrendModel {
    pub fn baseline() -> Self {
        Self { aux: None }
    }

    pub fn with_factor(loading: f64) -> Self {
        Self { aux: Some(loading) }
    }
}

impl ParamModel for TrendModel {
    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::new("sigma_R", Transform::Log), ParamSpec::new("sigma_y", Transform::Log)];
        if self.aux.is_some() {
            v.push(ParamSpec::new("rho", Transform::Atanh));
        }
        v
    }

    fn build(&self, values: &[f64]) -> Result<StateSpaceModel<f64>> {
        let (sr, sy) = (values[0], values[1]);
        match self.aux {
            None => StateSpaceModel::new(
                Measurement::constant(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
                DMatrix::from_element(1, 1, sr * sr),
                DVector::from_element(1, sy * sy),
                Initialization::all_diffuse(2),
            ),
            Some(s) => {
                let rho = values[2];
                StateSpaceModel::new(
                    Measurement::constant(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, s])),
                    DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
                    DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
                    DMatrix::from_row_slice(2, 2, &[sr * sr, rho * sr, rho * sr, 1.0]),
                    DVector::from_vec(vec![sy * sy, 1.0]),
                    Initialization::all_diffuse(3),
                )
            }
        }
    }
}

/// Full auxiliary model with one measurement row per series (`x_i = λ_i f + ε_i`).
pub fn full_aux_model(values: &[f64], lambda: &DVector<f64>, psi: &DVector<f64>) -> Result<StateSpaceModel<f64>> {
    let n = lambda.len();
    let (sr, sy, rho) = (values[0], values[1], values[2]);
    let mut z = DMatrix::zeros(n + 1, 3);
    z[(0, 0)] = 1.0;
    for i in 0..n {
        z[(i + 1, 2)] = lambda[i];
    }
    let mut h = DVector::zeros(n + 1);
    h[0] = sy * sy;
    h.rows_mut(1, n).copy_from(psi);
    StateSpaceModel::new(
        Measurement::constant(z),
        DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[sr * sr, rho * sr, rho * sr, 1.0]),
        h,
        Initialization::all_diffuse(3),
    )
}

/// Two-step data for the auxiliary model: `(loading s, T × 2 data [y, w])` with
/// `w_t = Λ̂'Ψ̂⁻¹ x̃_t / s`, `s² = Λ̂'Ψ̂⁻¹Λ̂`, on centered levels `x̃`.
pub fn collapsed_data(y: &[f64], x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let dec = pca_nonstationary(&Panel::from_matrix(x.clone(), Frequency::Monthly), 1)?;
    let lam = dec.loadings.column(0).into_owned();
    let psi = dec.idio_var.clone();
    let xc = dec.center_levels(x);
    let wts = DVector::from_fn(lam.len(), |i, _| lam[i] / psi[i]);
    let s2 = lam.dot(&wts);
    if !(s2 > 0.0) {
        return Err(Error::Estimation("auxiliary loadings are zero".into()));
    }
    let s = s2.sqrt();
    let w = &xc * &wts / s;
    let data = DMatrix::from_fn(y.len(), 2, |t, j| if j == 0 { y[t] } else { w[t] });
    Ok((s, data, lam, psi))
}

/// Starting values `(σ_R, σ_y, ρ)`.
pub const START: [f64; 3] = [0.5, 0.5, 0.0];

/// Filtered `(L̂_t, R̂_t)` at the last row of `data` after fitting `model` from `start`.
fn nowcast_last(model: &TrendModel, data: &DMatrix<f64>, start: &[f64], opts: &BfgsOptions) -> Result<(f64, f64, Vec<f64>)> {
    let fixed = vec![None; start.len()];
    let fit = fit_model(model, data, start, &fixed, opts)?;
    let m = model.build(&fit.values)?;
    let out = filter_with(&m, data, FilterOptions::default())?;
    let a = out.filtered_state.last().ok_or_else(|| Error::Data("empty sample".into()))?;
    Ok((a[0], a[1], fit.values))
}

/// Nowcast errors `(L̂ - L, R̂ - R)` for the periods of a schedule.
#[derive(Debug, Clone, Default)]
pub struct ErrorPath {
    pub level: Vec<f64>,
    pub slope: Vec<f64>,
}

fn oos_periods(t: usize, schedule: Schedule) -> std::ops::Range<usize> {
    match schedule {
        Schedule::FinalThird => t - t / 3..t,
        Schedule::LastPeriod => t - 1..t,
    }
}

/// Concurrent nowcast errors of the benchmark (`aux = false`) or the auxiliary
/// model. At period `t` the information set is `x_{0..=t}` and `y_{0..t}`;
/// hyperparameters and (for the auxiliary model) factors are re-estimated at
/// each step, warm-started from the previous optimum.
pub fn nowcast_errors(draw: &DgpDraw, schedule: Schedule, aux: bool, opts: &BfgsOptions) -> Result<ErrorPath> {
    let t_all = draw.y.len();
    let mut start: Vec<f64> = if aux { START.to_vec() } else { START[..2].to_vec() };
    let mut path = ErrorPath::default();
    for t in oos_periods(t_all, schedule) {
        let mut y: Vec<f64> = draw.y.rows(0, t + 1).iter().copied().collect();
        y[t] = f64::NAN;
        let (l, r, v) = if aux {
            let x = draw.x.rows(0, t + 1).into_owned();
            let (s, data, _, _) = collapsed_data(&y, &x)?;
            nowcast_last(&TrendModel::with_factor(s), &data, &start, opts)?
        } else {
            let data = DMatrix::from_column_slice(t + 1, 1, &y);
            nowcast_last(&TrendModel::baseline(), &data, &start, opts)?
        };
        start = v;
        path.level.push(l - draw.level[t]);
        path.slope.push(r - draw.slope[t]);
    }
    Ok(path)
}

/// MSFE with its variance and squared-bias components, averaged over periods.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct Decomposition {
    pub msfe: f64,
    pub var: f64,
    pub bias2: f64,
}

impl Decomposition {
    /// `errors[j][k]`: replication `j`, out-of-sample period `k`.
    pub fn from_errors(errors: &[Vec<f64>]) -> Self {
        let n = errors.len();
        if n == 0 {
            return Self::default();
        }
        let h = errors[0].len();
        let (mut msfe, mut var, mut bias2) = (0.0, 0.0, 0.0);
        for k in 0..h {
            let col: Vec<f64> = errors.iter().map(|e| e[k]).collect();
            let mean = kahan_sum(col.iter().copied()) / n as f64;
            let mse = kahan_sum(col.iter().map(|e| e * e)) / n as f64;
            let v = kahan_sum(col.iter().map(|e| (e - mean) * (e - mean))) / n as f64;
            msfe += mse;
            var += v;
            bias2 += mean * mean;
        }
        let h = h as f64;
        Self { msfe: msfe / h, var: var / h, bias2: bias2 / h }
    }

    pub fn relative_to(&self, base: &Decomposition) -> Decomposition {
        Decomposition { msfe: self.msfe / base.msfe, var: self.var / base.var, bias2: self.bias2 / base.bias2 }
    }
}

fn kahan_sum(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for v in it {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Relative accuracy of the auxiliary model for one `(regime, ρ)` cell.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct McCell {
    pub regime: Regime,
    pub rho: f64,
    pub level: Decomposition,
    pub slope: Decomposition,
    /// Monte Carlo standard error of the relative `MSFE(R̂)` (delta method).
    pub slope_msfe_se: f64,
    pub level_msfe_se: f64,
    /// Absolute decompositions behind the ratios.
    pub absolute: AbsoluteDecompositions,
    pub n_used: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AbsoluteDecompositions {
    pub aux_level: Decomposition,
    pub aux_slope: Decomposition,
    pub base_level: Decomposition,
    pub base_slope: Decomposition,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct McReport {
    pub cells: Vec<McCell>,
    pub n_sim: usize,
    pub t: usize,
    pub seed: u64,
}

impl McReport {
    pub fn cell(&self, regime: Regime, rho: f64) -> Option<&McCell> {
        self.cells.iter().find(|c| c.regime == regime && c.rho == rho)
    }

    /// Long-format rows `(regime, rho, measure, value)`.
    pub fn rows(&self) -> Vec<(String, f64, String, f64)> {
        let mut out = Vec::new();
        for c in &self.cells {
            for (state, d) in [("L", &c.level), ("R", &c.slope)] {
                for (m, v) in [("msfe", d.msfe), ("var", d.var), ("bias2", d.bias2)] {
                    out.push((c.regime.name().to_string(), c.rho, format!("{m}_{state}"), v));
                }
            }
        }
        out
    }
}

/// Seed of replication `j`.
pub fn replication_seed(master: u64, j: usize) -> u64 {
    // splitmix64 step
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(j as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn ratio_se(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.len() < 2 {
        return f64::NAN;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let r = ma / mb;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - r * y).collect();
    let md = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    sd / (n.sqrt() * mb)
}

/// Options of [`run_table2`].
#[derive(Debug, Clone)]
pub struct McOptions {
    pub t: usize,
    pub n: usize,
    pub bfgs: BfgsOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { t: 150, n: 100, bfgs: BfgsOptions { grad_tol: 1e-4, rel_tol: 1e-8, ..BfgsOptions::default() } }
    }
}

struct RepOutcome {
    base: ErrorPath,
    aux: Vec<Option<ErrorPath>>,
}

/// Relative nowcast accuracy over a grid of regimes and correlations.
///
/// A replication whose benchmark fails is dropped from every cell; a failed
/// auxiliary fit drops the replication from that cell only.
pub fn run_table2(regimes: &[Regime], rhos: &[f64], n_sim: usize, seed: u64, opts: &McOptions) -> Result<McReport> {
    for &rho in rhos {
        DgpSpec { t: opts.t, n: opts.n, rho, regime: Regime::HomoskedasticDense, seed }.validate()?;
    }
    let grid: Vec<(Regime, f64)> = regimes.iter().flat_map(|&g| rhos.iter().map(move |&r| (g, r))).collect();
    let needs_third = regimes.iter().any(|g| g.schedule() == Schedule::FinalThird);
    let outcomes: Vec<Option<RepOutcome>> = (0..n_sim)
        .into_par_iter()
        .map(|j| {
            let rs = replication_seed(seed, j);
            let spec0 = DgpSpec { t: opts.t, n: opts.n, rho: 0.0, regime: Regime::HomoskedasticDense, seed: rs };
            let draw0 = simulate_dgp(&spec0).ok()?;
            let schedule = if needs_third { Schedule::FinalThird } else { Schedule::LastPeriod };
            let base = match nowcast_errors(&draw0, schedule, false, &opts.bfgs) {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("replication {j}: benchmark failed: {e}");
                    return None;
                }
            };
            let aux = grid
                .iter()
                .map(|&(g, rho)| {
                    let draw = simulate_dgp(&DgpSpec { rho, regime: g, ..spec0.clone() }).ok()?;
                    match nowcast_errors(&draw, g.schedule(), true, &opts.bfgs) {
                        Ok(p) => Some(p),
                        Err(e) => {
                            log::warn!("replication {j}, {} rho={rho}: {e}", g.name());
                            None
                        }
                    }
                })
                .collect();
            Some(RepOutcome { base, aux })
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    for (gi, &(g, rho)) in grid.iter().enumerate() {
        let (mut al, mut ar, mut bl, mut br) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut failed = 0;
        for o in &outcomes {
            let Some(o) = o else {
                failed += 1;
                continue;
            };
            let Some(a) = &o.aux[gi] else {
                failed += 1;
                continue;
            };
            let keep = a.level.len();
            let tail = |v: &[f64]| v[v.len() - keep..].to_vec();
            al.push(a.level.clone());
            ar.push(a.slope.clone());
            bl.push(tail(&o.base.level));
            br.push(tail(&o.base.slope));
        }
        let per_rep = |v: &[Vec<f64>]| -> Vec<f64> { v.iter().map(|e| e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).collect() };
        let absolute = AbsoluteDecompositions {
            aux_level: Decomposition::from_errors(&al),
            aux_slope: Decomposition::from_errors(&ar),
            base_level: Decomposition::from_errors(&bl),
            base_slope: Decomposition::from_errors(&br),
        };
        cells.push(McCell {
            regime: g,
            rho,
            level: absolute.aux_level.relative_to(&absolute.base_level),
            slope: absolute.aux_slope.relative_to(&absolute.base_slope),
            absolute,
            slope_msfe_se: ratio_se(&per_rep(&ar), &per_rep(&br)),
            level_msfe_se: ratio_se(&per_rep(&al), &per_rep(&bl)),
            n_used: al.len(),
            n_failed: failed,
        });
    }
    Ok(McReport { cells, n_sim, t: opts.t, seed })
}

/// LR statistics for `ρ = 0` under a regime, and their distance to `χ²₁`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LrNullReport {
    pub regime: Regime,
    pub statistics: Vec<f64>,
    pub ks_distance: f64,
    pub mean: f64,
    /// Share of replications whose raw statistic was negative before clipping.
    pub clip_rate: f64,
    pub n_failed: usize,
}

/// Kolmogorov–Smirnov distance between the sample and `χ²₁`.
pub fn ks_chi2_1(sample: &[f64]) -> f64 {
    let chi = ChiSquared::new(1.0).expect("valid df");
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = chi.cdf(v.max(0.0));
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Full-sample LR test of `ρ = 0` in `n_sim` replications with `ρ = 0` truth.
pub fn run_lr_null(regime: Regime, n_sim: usize, seed: u64, opts: &McOptions) -> Result<LrNullReport> {
    let raw: Vec<Option<(f64, bool)>> = (0..n_sim)
        .into_par_iter()
        .map(|j| {
            let spec = DgpSpec { t: opts.t, n: opts.n, rho: 0.0, regime, seed: replication_seed(seed, j) };
            let draw = simulate_dgp(&spec).ok()?;
            let y: Vec<f64> = draw.y.iter().copied().collect();
            let (s, data, _, _) = collapsed_data(&y, &draw.x).ok()?;
            let model = TrendModel::with_factor(s);
            let free = fit_model(&model, &data, &START, &[None, None, None], &opts.bfgs).ok()?;
            let restricted = fit_model(&model, &data, &free.values, &[None, None, Some(0.0)], &opts.bfgs).ok()?;
            // a restricted optimum above the unrestricted one signals a local optimum; refit from it
            let free = if restricted.loglik > free.loglik {
                fit_model(&model, &data, &restricted.values, &[None, None, None], &opts.bfgs).ok()?
            } else {
                free
            };
            let clipped = restricted.loglik > free.loglik;
            let t = lr_from_logliks("rho=0", restricted.loglik, free.loglik, 1).ok()?;
            Some((t.statistic, clipped))
        })
        .collect();
    let n_failed = raw.iter().filter(|r| r.is_none()).count();
    let ok: Vec<(f64, bool)> = raw.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Estimation("every LR replication failed".into()));
    }
    let statistics: Vec<f64> = ok.iter().map(|v| v.0).collect();
    let mean = statistics.iter().sum::<f64>() / statistics.len() as f64;
    Ok(LrNullReport {
        regime,
        ks_distance: ks_chi2_1(&statistics),
        mean,
        clip_rate: ok.iter().filter(|v| v.1).count() as f64 / ok.len() as f64,
        statistics,
        n_failed,
    })
}
