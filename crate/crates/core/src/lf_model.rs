//! State-space form of the rotating-panel labour-force model and its extensions.
//!
//! State layout (zero-based):
//!
//! | block | states |
//! |---|---|
//! | LFS trend | `L` 0, `R` 1 |
//! | LFS seasonal | `S1, S1*, …, S5, S5*, S6` 2..=12 |
//! | RGB | `λ2..λ5` 13..=16 |
//! | survey errors | `ẽ1..ẽ5` 17..=21, `ẽ_{1..4,t-2}` 22..=25, `ẽ_{1..4,t-1}` 26..=29 |
//! | claimant counts | `L, R, 11 seasonal` (13 states, optional) |
//! | factors | `r` random walks, or `f_t..f_{t-q}`, or the 4-state ARIMA block |
//! | I(1) idiosyncratics | one random walk per promoted series |
//!
//! Observation columns: the five waves, then the claimant count (optional), then
//! the auxiliary panel.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mle::{ParamSpec, Transform};
use crate::ssm::{Initialization, Measurement, StateSpaceModel};

pub const N_WAVES: usize = 5;
pub const M_LFS: usize = 30;
pub const M_CC: usize = 13;
/// Diffuse states of the baseline model (trend, seasonal, RGB).
pub const D_BASELINE: usize = 17;

const L_Y: usize = 0;
const R_Y: usize = 1;
const SEAS_Y: usize = 2;
const RGB: usize = 13;
const ERR: usize = 17;

/// Claimant-count block parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CcParams {
    pub sigma_r: f64,
    pub sigma_omega: f64,
    pub sigma_eps: f64,
    pub rho: f64,
    /// Level innovation s.d., zero in the smooth-trend model.
    pub sigma_l: f64,
}

/// Free parameters of the labour-force models.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperParams {
    pub sigma_r_y: f64,
    pub sigma_omega_y: f64,
    pub sigma_lambda: f64,
    pub sigma_nu: [f64; 5],
    pub delta: f64,
    /// Level innovation s.d., zero in the smooth-trend model.
    pub sigma_l_y: f64,
    pub cc: Option<CcParams>,
    /// Correlation of each factor innovation with the LFS slope innovation.
    pub rho_gt: Vec<f64>,
    /// Correlation of each factor innovation with the claimant-count slope innovation.
    pub rho_cc_gt: Option<Vec<f64>>,
    /// Distributed-lag coefficients of the slope on past factor innovations.
    pub kappa: Vec<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            sigma_r_y: 1.0,
            sigma_omega_y: 0.1,
            sigma_lambda: 1.0,
            sigma_nu: [1.0; 5],
            delta: 0.3,
            sigma_l_y: 0.0,
            cc: None,
            rho_gt: Vec::new(),
            rho_cc_gt: None,
            kappa: Vec::new(),
        }
    }
}

/// ARIMA(3,1,1) factor dynamics `(φ1, φ2, φ3, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArimaSpec {
    pub phi: [f64; 3],
    pub gamma: f64,
}

/// Structure of a labour-force model with optional auxiliary blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub include_cc: bool,
    pub include_gt: bool,
    pub r: usize,
    pub factor_lags: usize,
    pub factor_arima: Option<ArimaSpec>,
    /// Auxiliary series whose idiosyncratic component is a random walk.
    pub i1_idio_mask: Vec<bool>,
    /// `Λ̂`, `n × r`.
    pub loadings: DMatrix<f64>,
    /// `Ψ̂`: variance of `ε` (I(0) rows) or of `Δε` (I(1) rows).
    pub psi: DVector<f64>,
}

impl ModelSpec {
    pub fn baseline() -> Self {
        Self {
            include_cc: false,
            include_gt: false,
            r: 0,
            factor_lags: 0,
            factor_arima: None,
            i1_idio_mask: Vec::new(),
            loadings: DMatrix::zeros(0, 0),
            psi: DVector::zeros(0),
        }
    }

    pub fn with_cc() -> Self {
        Self { include_cc: true, ..Self::baseline() }
    }

    /// Auxiliary-panel model with `r = loadings.ncols()` factors.
    pub fn with_gt(loadings: DMatrix<f64>, psi: DVector<f64>, include_cc: bool) -> Self {
        let n = loadings.nrows();
        Self {
            include_cc,
            include_gt: loadings.ncols() > 0,
            r: loadings.ncols(),
            factor_lags: 0,
            factor_arima: None,
            i1_idio_mask: vec![false; n],
            loadings,
            psi,
        }
    }

    pub fn n_gt(&self) -> usize {
        if self.include_gt {
            self.loadings.nrows()
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.include_gt {
            return Ok(());
        }
        let n = self.loadings.nrows();
        if self.r == 0 || self.loadings.ncols() != self.r {
            return Err(Error::Config(format!("r={} but loadings have {} columns", self.r, self.loadings.ncols())));
        }
        if self.psi.len() != n || self.i1_idio_mask.len() != n {
            return Err(Error::Config(format!(
                "{n} auxiliary series but psi has {} entries and the I(1) mask {}",
                self.psi.len(),
                self.i1_idio_mask.len()
            )));
        }
        if let Some(i) = self.psi.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("idiosyncratic variance of series {i} must be positive")));
        }
        if (self.factor_lags > 0 || self.factor_arima.is_some()) && self.r != 1 {
            return Err(Error::Config("factor lags and ARIMA dynamics require r = 1".into()));
        }
        if self.factor_lags > 0 && self.factor_arima.is_some() {
            return Err(Error::Config("factor lags and ARIMA dynamics are mutually exclusive".into()));
        }
        Ok(())
    }

    /// Number of states in the factor block.
    pub fn factor_states(&self) -> usize {
        if !self.include_gt {
            0
        } else if self.factor_arima.is_some() {
            4
        } else if self.factor_lags > 0 {
            self.factor_lags + 1
        } else {
            self.r
        }
    }

    pub fn layout(&self) -> StateLayout {
        let cc = self.include_cc.then_some(M_LFS);
        let factor = M_LFS + if self.include_cc { M_CC } else { 0 };
        let idio = factor + self.factor_states();
        let n_idio = if self.include_gt { self.i1_idio_mask.iter().filter(|&&b| b).count() } else { 0 };
        StateLayout {
            cc,
            factor: self.include_gt.then_some(factor),
            idio: (idio..idio + n_idio).collect(),
            m: idio + n_idio,
        }
    }

    /// Observation columns: 5 waves, optional claimant count, auxiliary panel.
    pub fn p(&self) -> usize {
        N_WAVES + usize::from(self.include_cc) + self.n_gt()
    }
}

/// Offsets of the state blocks for a given [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub cc: Option<usize>,
    pub factor: Option<usize>,
    pub idio: Vec<usize>,
    pub m: usize,
}

impl StateLayout {
    pub const LEVEL: usize = L_Y;
    pub const SLOPE: usize = R_Y;

    /// Weights selecting `θ = L + Σ_l S_l` from the state vector.
    pub fn theta_weights(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.m);
        for j in theta_columns() {
            w[j] = 1.0;
        }
        w
    }
}

fn theta_columns() -> [usize; 7] {
    [L_Y, SEAS_Y, SEAS_Y + 2, SEAS_Y + 4, SEAS_Y + 6, SEAS_Y + 8, SEAS_Y + 10]
}

/// Trend + trigonometric seasonal transition (13 × 13).
fn trend_seasonal_transition() -> DMatrix<f64> {
    let mut t = DMatrix::zeros(13, 13);
    t[(0, 0)] = 1.0;
    t[(0, 1)] = 1.0;
    t[(1, 1)] = 1.0;
    for l in 1..=5 {
        let h = std::f64::consts::PI * l as f64 / 6.0;
        let k = 2 * l;
        t[(k, k)] = h.cos();
        t[(k, k + 1)] = h.sin();
        t[(k + 1, k)] = -h.sin();
        t[(k + 1, k + 1)] = h.cos();
    }
    t[(12, 12)] = -1.0;
    t
}

/// Survey-error transition `T_E` (13 × 13).
pub fn survey_error_transition(delta: f64) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(13, 13);
    for j in 1..5 {
        t[(j, 4 + j)] = delta;
    }
    for j in 0..4 {
        t[(5 + j, 9 + j)] = 1.0;
        t[(9 + j, j)] = 1.0;
    }
    t
}

/// Initial variances of the 13 survey-error states.
pub fn survey_error_init(sigma_nu: &[f64; 5], delta: f64) -> [f64; 13] {
    let var = |j: usize| {
        if j == 0 {
            sigma_nu[0].powi(2)
        } else {
            sigma_nu[j].powi(2) / (1.0 - delta * delta)
        }
    };
    let mut out = [0.0; 13];
    for (j, o) in out.iter_mut().enumerate().take(5) {
        *o = var(j);
    }
    for j in 0..4 {
        out[5 + j] = var(j);
        out[9 + j] = var(j);
    }
    out
}

/// Sets to missing every wave cell whose design standard error is missing.
pub fn mask_missing_design(y: &mut DMatrix<f64>, c: &DMatrix<f64>) {
    for t in 0..y.nrows().min(c.nrows()) {
        for j in 0..N_WAVES {
            if !c[(t, j)].is_finite() {
                y[(t, j)] = f64::NAN;
            }
        }
    }
}

fn check_design(c: &DMatrix<f64>) -> Result<()> {
    if c.ncols() != N_WAVES {
        return Err(Error::Data(format!("design standard errors need {N_WAVES} columns, got {}", c.ncols())));
    }
    for t in 0..c.nrows() {
        for j in 0..N_WAVES {
            let v = c[(t, j)];
            if v.is_finite() && v <= 0.0 {
                return Err(Error::Data(format!("nonpositive design standard error at row {t}, wave {}", j + 1)));
            }
        }
    }
    Ok(())
}

fn check_hyper(spec: &ModelSpec, hp: &HyperParams) -> Result<()> {
    let mut sds = vec![("sigma_R_y", hp.sigma_r_y), ("sigma_omega_y", hp.sigma_omega_y), ("sigma_lambda", hp.sigma_lambda)];
    sds.push(("sigma_L_y", hp.sigma_l_y));
    for (j, s) in hp.sigma_nu.iter().enumerate() {
        sds.push((["sigma_nu1", "sigma_nu2", "sigma_nu3", "sigma_nu4", "sigma_nu5"][j], *s));
    }
    if let Some(cc) = &hp.cc {
        sds.extend([("sigma_R_cc", cc.sigma_r), ("sigma_omega_cc", cc.sigma_omega), ("sigma_eps_cc", cc.sigma_eps), ("sigma_L_cc", cc.sigma_l)]);
    }
    for (name, v) in sds {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Parameter(format!("{name} = {v} must be a finite nonnegative s.d.")));
        }
    }
    if !(hp.delta.abs() < 1.0) {
        return Err(Error::Parameter(format!("delta = {} outside (-1, 1)", hp.delta)));
    }
    if spec.include_cc && hp.cc.is_none() {
        return Err(Error::Parameter("claimant-count block requires its parameters".into()));
    }
    if spec.include_gt && hp.rho_gt.len() != spec.r {
        return Err(Error::Parameter(format!("{} factor correlations for r = {}", hp.rho_gt.len(), spec.r)));
    }
    if let Some(v) = &hp.rho_cc_gt {
        if !spec.include_cc || v.len() != spec.r {
            return Err(Error::Parameter("rho_cc_gt requires the claimant-count block and r entries".into()));
        }
    }
    if hp.kappa.len() != spec.factor_lags {
        return Err(Error::Parameter(format!("{} lag coefficients for q = {}", hp.kappa.len(), spec.factor_lags)));
    }
    let mut rhos: Vec<f64> = hp.rho_gt.clone();
    if let Some(cc) = &hp.cc {
        rhos.push(cc.rho);
    }
    if let Some(v) = &hp.rho_cc_gt {
        rhos.extend(v);
    }
    if let Some(r) = rhos.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Error::Parameter(format!("correlation {r} outside (-1, 1)")));
    }
    Ok(())
}

/// Correlation block of `(η_R,y, η_R,CC, u_1..u_r)`; PSD is required.
pub fn slope_factor_correlation(spec: &ModelSpec, hp: &HyperParams) -> DMatrix<f64> {
    let r = if spec.include_gt { spec.r } else { 0 };
    let has_cc = spec.include_cc;
    let k = 1 + usize::from(has_cc) + r;
    let mut c = DMatrix::identity(k, k);
    let f0 = 1 + usize::from(has_cc);
    if has_cc {
        let rho = hp.cc.as_ref().map_or(0.0, |cc| cc.rho);
        c[(0, 1)] = rho;
        c[(1, 0)] = rho;
    }
    for m in 0..r {
        c[(0, f0 + m)] = hp.rho_gt[m];
        c[(f0 + m, 0)] = hp.rho_gt[m];
        if let (true, Some(v)) = (has_cc, &hp.rho_cc_gt) {
            c[(1, f0 + m)] = v[m];
            c[(f0 + m, 1)] = v[m];
        }
    }
    c
}

fn check_psd_block(spec: &ModelSpec, hp: &HyperParams) -> Result<()> {
    let c = slope_factor_correlation(spec, hp);
    if c.nrows() <= 1 {
        return Ok(());
    }
    let min = c.clone().symmetric_eigenvalues().min();
    if min < -1e-10 {
        let mut parts = Vec::new();
        if let Some(cc) = &hp.cc {
            parts.push(format!("rho_cc={}", cc.rho));
        }
        parts.push(format!("rho_gt={:?}", hp.rho_gt));
        if let Some(v) = &hp.rho_cc_gt {
            parts.push(format!("rho_cc_gt={v:?}"));
        }
        return Err(Error::Parameter(format!(
            "slope/factor innovation covariance not PSD (min eigenvalue {min:.3e}) for {}",
            parts.join(", ")
        )));
    }
    Ok(())
}

/// Stationary covariance `S = A S A' + b b'` via the vectorized Lyapunov equation.
pub fn stationary_cov(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    let kron = a.kronecker(a);
    let lhs = DMatrix::identity(k * k, k * k) - kron;
    let rhs_m = b * b.transpose();
    let rhs = DVector::from_iterator(k * k, rhs_m.iter().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Parameter("factor ARMA dynamics are not stationary".into()))?;
    let s = DMatrix::from_iterator(k, k, sol.iter().copied());
    let s = (&s + s.transpose()) * 0.5;
    if s.iter().any(|v| !v.is_finite()) || (0..k).any(|i| s[(i, i)] < -1e-10) {
        return Err(Error::Parameter("factor ARMA dynamics are not stationary".into()));
    }
    Ok(s)
}

/// The 4-state ARIMA(3,1,1) block: transition, innovation loading and the
/// stationary covariance of the last three states.
pub fn arima_block(arima: &ArimaSpec) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let [p1, p2, p3] = arima.phi;
    let ratio = if p2 == 0.0 {
        if p3 != 0.0 {
            return Err(Error::Parameter("ARIMA factor block needs phi2 != 0 when phi3 != 0".into()));
        }
        0.0
    } else {
        p3 / p2
    };
    let t = DMatrix::from_row_slice(4, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, p1, 1.0, 1.0, 0.0, p2, 0.0, 0.0, 0.0, 0.0, ratio, 0.0]);
    let r = DVector::from_vec(vec![0.0, 1.0, 0.0, arima.gamma]);
    let a = t.view((1, 1), (3, 3)).into_owned();
    let b = r.rows(1, 3).into_owned();
    let s = stationary_cov(&a, &b)?;
    Ok((t, r, s))
}

/// Baseline five-wave model (m = 30).
pub fn build_baseline(hp: &HyperParams, c: &DMatrix<f64>) -> Result<StateSpaceModel<f64>> {
    build(&ModelSpec::baseline(), hp, c)
}

/// Baseline plus claimant counts (m = 43).
pub fn build_with_cc(hp: &HyperParams, c: &DMatrix<f64>) -> Result<StateSpaceModel<f64>> {
    build(&ModelSpec::with_cc(), hp, c)
}

/// Baseline plus the auxiliary factor block (m = 30 + r + extensions).
pub fn build_with_gt(spec: &ModelSpec, hp: &HyperParams, c: &DMatrix<f64>) -> Result<StateSpaceModel<f64>> {
    if spec.include_cc {
        return Err(Error::Config("build_with_gt expects a spec without claimant counts".into()));
    }
    build(spec, hp, c)
}

/// Baseline plus claimant counts and factors (m = 43 + r + extensions).
pub fn build_full(spec: &ModelSpec, hp: &HyperParams, c: &DMatrix<f64>) -> Result<StateSpaceModel<f64>> {
    if !spec.include_cc || !spec.include_gt {
        return Err(Error::Config("build_full expects claimant counts and factors".into()));
    }
    build(spec, hp, c)
}

/// Spec with `q` lags of the factor in the slope equation.
pub fn extend_factor_lags(spec: &ModelSpec, q: usize) -> ModelSpec {
    ModelSpec { factor_lags: q, factor_arima: None, ..spec.clone() }
}

/// Spec with an ARIMA(3,1,1) factor.
pub fn extend_factor_arima(spec: &ModelSpec, arima: ArimaSpec) -> Result<ModelSpec> {
    arima_block(&arima)?;
    Ok(ModelSpec { factor_arima: Some(arima), factor_lags: 0, ..spec.clone() })
}

/// Spec with the masked idiosyncratic components promoted to random-walk states.
pub fn promote_i1_idiosyncratics(spec: &ModelSpec, mask: &[bool]) -> Result<ModelSpec> {
    if mask.len() != spec.n_gt() {
        return Err(Error::Config(format!("mask has {} entries for {} series", mask.len(), spec.n_gt())));
    }
    Ok(ModelSpec { i1_idio_mask: mask.to_vec(), ..spec.clone() })
}

/// Assembles the state-space model for any spec. `c` is `T × 5`; missing cells are
/// allowed only where the corresponding wave is unobserved (see [`mask_missing_design`]).
pub fn build(spec: &ModelSpec, hp: &HyperParams, c: &DMatrix<f64>) -> Result<StateSpaceModel<f64>> {
    spec.validate()?;
    check_design(c)?;
    check_hyper(spec, hp)?;
    check_psd_block(spec, hp)?;
    let lay = spec.layout();
    let m = lay.m;
    let p = spec.p();
    let n_gt = spec.n_gt();

    let arima = match &spec.factor_arima {
        Some(a) if spec.include_gt => Some(arima_block(a)?),
        _ => None,
    };
    // innovations: one per state, except the ARIMA block which has a single one
    let q = if arima.is_some() { m - 3 } else { m };
    let innov_of = |state: usize| -> usize {
        match (arima.is_some(), lay.factor) {
            (true, Some(f)) if state >= f + 4 => state - 3,
            _ => state,
        }
    };

    let mut t = DMatrix::zeros(m, m);
    let mut rsel = DMatrix::zeros(m, q);
    let mut qm = DMatrix::zeros(q, q);
    let mut tags = vec![None; m];

    // LFS block
    let ts = trend_seasonal_transition();
    t.view_mut((0, 0), (13, 13)).copy_from(&ts);
    for i in 0..4 {
        t[(RGB + i, RGB + i)] = 1.0;
    }
    t.view_mut((ERR, ERR), (13, 13)).copy_from(&survey_error_transition(hp.delta));
    qm[(L_Y, L_Y)] = hp.sigma_l_y.powi(2);
    qm[(R_Y, R_Y)] = hp.sigma_r_y.powi(2);
    for i in 0..11 {
        qm[(SEAS_Y + i, SEAS_Y + i)] = hp.sigma_omega_y.powi(2);
    }
    for i in 0..4 {
        qm[(RGB + i, RGB + i)] = hp.sigma_lambda.powi(2);
    }
    for j in 0..5 {
        qm[(ERR + j, ERR + j)] = hp.sigma_nu[j].powi(2);
    }
    let e0 = survey_error_init(&hp.sigma_nu, hp.delta);
    for (i, tag) in tags.iter_mut().enumerate().take(M_LFS) {
        *tag = if i >= ERR { Some(e0[i - ERR]) } else { None };
    }

    // claimant counts
    if let (Some(o), Some(cc)) = (lay.cc, &hp.cc) {
        t.view_mut((o, o), (13, 13)).copy_from(&ts);
        qm[(o, o)] = cc.sigma_l.powi(2);
        qm[(o + 1, o + 1)] = cc.sigma_r.powi(2);
        for i in 0..11 {
            qm[(o + 2 + i, o + 2 + i)] = cc.sigma_omega.powi(2);
        }
        let cov = cc.rho * hp.sigma_r_y * cc.sigma_r;
        qm[(R_Y, o + 1)] = cov;
        qm[(o + 1, R_Y)] = cov;
    }

    // factors
    let mut p_star_block: Option<(usize, DMatrix<f64>)> = None;
    if let Some(f) = lay.factor {
        let sigma_cc_r = hp.cc.as_ref().map_or(0.0, |cc| cc.sigma_r);
        let add_cross = |qm: &mut DMatrix<f64>, u: usize, m_idx: usize| {
            qm[(u, u)] = 1.0;
            let c = hp.rho_gt[m_idx] * hp.sigma_r_y;
            qm[(R_Y, u)] = c;
            qm[(u, R_Y)] = c;
            if let (Some(o), Some(v)) = (lay.cc, &hp.rho_cc_gt) {
                let c = v[m_idx] * sigma_cc_r;
                qm[(o + 1, u)] = c;
                qm[(u, o + 1)] = c;
            }
        };
        if let Some((ta, ra, sa)) = &arima {
            t.view_mut((f, f), (4, 4)).copy_from(ta);
            for k in 0..4 {
                rsel[(f + k, f)] = ra[k];
            }
            add_cross(&mut qm, f, 0);
            tags[f] = None;
            p_star_block = Some((f + 1, sa.clone()));
        } else if spec.factor_lags > 0 {
            let q_l = spec.factor_lags;
            t[(f, f)] = 1.0;
            for k in 1..=q_l {
                t[(f + k, f + k - 1)] = 1.0;
            }
            // R_t = R_{t-1} + κ1 f_{t-1} + Σ (κ_j - κ_{j-1}) f_{t-j} - κ_q f_{t-q-1} + w_t
            let kap = &hp.kappa;
            t[(R_Y, f)] = kap[0];
            for j in 2..=q_l {
                t[(R_Y, f + j - 1)] = kap[j - 1] - kap[j - 2];
            }
            t[(R_Y, f + q_l)] = -kap[q_l - 1];
            add_cross(&mut qm, f, 0);
        } else {
            for k in 0..spec.r {
                t[(f + k, f + k)] = 1.0;
                add_cross(&mut qm, f + k, k);
            }
        }
    }
    // I(1) idiosyncratic states
    let masked: Vec<usize> = (0..n_gt).filter(|&i| spec.i1_idio_mask[i]).collect();
    for (k, &i) in masked.iter().enumerate() {
        let s = lay.idio[k];
        t[(s, s)] = 1.0;
        qm[(innov_of(s), innov_of(s))] = spec.psi[i];
    }
    if arima.is_none() {
        for i in 0..m {
            rsel[(i, i)] = 1.0;
        }
    } else if let Some(f) = lay.factor {
        for i in 0..m {
            if i < f || i >= f + 4 {
                rsel[(i, innov_of(i))] = 1.0;
            }
        }
    }

    // measurement
    let mut z = DMatrix::zeros(p, m);
    let mut h = DVector::zeros(p);
    let mut varying = Vec::with_capacity(N_WAVES);
    for j in 0..N_WAVES {
        for col in theta_columns() {
            z[(j, col)] = 1.0;
        }
        if j > 0 {
            z[(j, RGB + j - 1)] = 1.0;
        }
        let vals: Vec<f64> = (0..c.nrows()).map(|tt| if c[(tt, j)].is_finite() { c[(tt, j)] } else { 1.0 }).collect();
        varying.push((j, ERR + j, vals));
    }
    let mut row = N_WAVES;
    if let (Some(o), Some(cc)) = (lay.cc, &hp.cc) {
        for col in theta_columns() {
            z[(row, o + col)] = 1.0;
        }
        h[row] = cc.sigma_eps.powi(2);
        row += 1;
    }
    if let Some(f) = lay.factor {
        let mut k_idio = 0;
        for i in 0..n_gt {
            if arima.is_some() {
                z[(row + i, f)] = spec.loadings[(i, 0)];
                z[(row + i, f + 1)] = spec.loadings[(i, 0)];
            } else {
                for k in 0..spec.r {
                    z[(row + i, f + k)] = spec.loadings[(i, k)];
                }
            }
            if spec.i1_idio_mask[i] {
                z[(row + i, lay.idio[k_idio])] = 1.0;
                k_idio += 1;
            } else {
                h[row + i] = spec.psi[i];
            }
        }
    }

    let mut init = Initialization::from_tags(
        &tags
            .iter()
            .map(|v| match v {
                Some(x) => crate::ssm::StateInit::Exact(*x),
                None => crate::ssm::StateInit::Diffuse,
            })
            .collect::<Vec<_>>(),
    );
    if let Some((off, s)) = p_star_block {
        for a in 0..3 {
            init.diffuse[off + a] = false;
            for b in 0..3 {
                init.p_star[(off + a, off + b)] = s[(a, b)];
            }
        }
    }

    StateSpaceModel::new(Measurement::with_varying(z, varying), t, rsel, qm, h, init)
}

/// Parameter vector layout used by the optimizer for a given spec.
///
/// Order: `sigma_R_y, sigma_omega_y, sigma_lambda, sigma_nu1..5, delta`, then
/// `sigma_R_cc, sigma_omega_cc, sigma_eps_cc, rho_cc`, then `rho_gt_m`, then
/// `rho_cc_gt_m`, then `kappa_j`.
pub fn param_specs(spec: &ModelSpec, all_corr: bool) -> Vec<ParamSpec> {
    let mut v = vec![
        ParamSpec::new("sigma_R_y", Transform::Log),
        ParamSpec::new("sigma_omega_y", Transform::Log),
        ParamSpec::new("sigma_lambda", Transform::Log),
    ];
    for j in 1..=5 {
        v.push(ParamSpec::new(&format!("sigma_nu{j}"), Transform::Log));
    }
    v.push(ParamSpec::new("delta", Transform::Atanh));
    if spec.include_cc {
        v.push(ParamSpec::new("sigma_R_cc", Transform::Log));
        v.push(ParamSpec::new("sigma_omega_cc", Transform::Log));
        v.push(ParamSpec::new("sigma_eps_cc", Transform::Log));
        v.push(ParamSpec::new("rho_cc", Transform::Atanh));
    }
    if spec.include_gt {
        for m in 1..=spec.r {
            v.push(ParamSpec::new(&format!("rho_gt{m}"), Transform::Atanh));
        }
        if all_corr && spec.include_cc {
            for m in 1..=spec.r {
                v.push(ParamSpec::new(&format!("rho_cc_gt{m}"), Transform::Atanh));
            }
        }
    }
    for j in 1..=spec.factor_lags {
        v.push(ParamSpec::new(&format!("kappa{j}"), Transform::Identity));
    }
    v
}

impl HyperParams {
    /// Values in the order of [`param_specs`].
    pub fn to_values(&self, spec: &ModelSpec, all_corr: bool) -> Vec<f64> {
        let mut v = vec![self.sigma_r_y, self.sigma_omega_y, self.sigma_lambda];
        v.extend(self.sigma_nu);
        v.push(self.delta);
        if spec.include_cc {
            let cc = self.cc.clone().unwrap_or(CcParams { sigma_r: 1.0, sigma_omega: 0.1, sigma_eps: 1.0, rho: 0.0, sigma_l: 0.0 });
            v.extend([cc.sigma_r, cc.sigma_omega, cc.sigma_eps, cc.rho]);
        }
        if spec.include_gt {
            for m in 0..spec.r {
                v.push(self.rho_gt.get(m).copied().unwrap_or(0.0));
            }
            if all_corr && spec.include_cc {
                for m in 0..spec.r {
                    v.push(self.rho_cc_gt.as_ref().and_then(|x| x.get(m).copied()).unwrap_or(0.0));
                }
            }
        }
        for j in 0..spec.factor_lags {
            v.push(self.kappa.get(j).copied().unwrap_or(0.0));
        }
        v
    }

    /// Inverse of [`HyperParams::to_values`].
    pub fn from_values(spec: &ModelSpec, all_corr: bool, v: &[f64]) -> Self {
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("parameter vector too short");
        let sigma_r_y = next();
        let sigma_omega_y = next();
        let sigma_lambda = next();
        let sigma_nu = [next(), next(), next(), next(), next()];
        let delta = next();
        let cc = spec.include_cc.then(|| CcParams {
            sigma_r: next(),
            sigma_omega: next(),
            sigma_eps: next(),
            rho: next(),
            sigma_l: 0.0,
        });
        let mut rho_gt = Vec::new();
        let mut rho_cc_gt = None;
        if spec.include_gt {
            rho_gt = (0..spec.r).map(|_| next()).collect();
            if all_corr && spec.include_cc {
                rho_cc_gt = Some((0..spec.r).map(|_| next()).collect());
            }
        }
        let kappa = (0..spec.factor_lags).map(|_| next()).collect();
        Self { sigma_r_y, sigma_omega_y, sigma_lambda, sigma_nu, delta, sigma_l_y: 0.0, cc, rho_gt, rho_cc_gt, kappa }
    }
}
