//! Mixed-frequency aggregation, real-time information sets, recursive nowcasting
//! and the accuracy measures built on filtered covariances.

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factors::{two_step, FactorDecomposition, TwoStepOptions};
use crate::lf_model::{self, ModelSpec, StateLayout, D_BASELINE, N_WAVES};
use crate::mle::{default_init, fit_model, BfgsOptions, EstimationResult, LfModel, ParamModel};
use crate::panel::{Frequency, Panel};
use crate::ssm::{filter_with, smooth, FilterOptions, FilterOutput};
use crate::targeting::{target_panel, ElasticNetOptions, TargetingGrid, TargetingResult};

/// Assignment of consecutive weeks to consecutive months.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekCalendar {
    weeks: Vec<NaiveDate>,
    months: Vec<NaiveDate>,
    /// Index of the first week of each month, plus a final sentinel.
    bounds: Vec<usize>,
}

fn month_start(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), d.month(), 1).expect("valid month start")
}

impl WeekCalendar {
    /// Each seven-day week goes to the month holding at least four of its days.
    pub fn majority_day(week_starts: &[NaiveDate]) -> Result<Self> {
        let months: Vec<NaiveDate> = week_starts.iter().map(|&w| month_start(w + Duration::days(3))).collect();
        Self::from_assignments(week_starts, &months)
    }

    /// Builds a calendar from explicit `(week start, month)` pairs.
    pub fn from_assignments(week_starts: &[NaiveDate], month_of_week: &[NaiveDate]) -> Result<Self> {
        if week_starts.len() != month_of_week.len() {
            return Err(Error::Data(format!("{} weeks but {} month labels", week_starts.len(), month_of_week.len())));
        }
        if week_starts.is_empty() {
            return Err(Error::Data("calendar has no weeks".into()));
        }
        for w in week_starts.windows(2) {
            if w[1] - w[0] != Duration::days(7) {
                return Err(Error::Data(format!("weeks {} and {} are not consecutive", w[0], w[1])));
            }
        }
        let mut months = vec![month_start(month_of_week[0])];
        let mut bounds = vec![0];
        for (i, m) in month_of_week.iter().enumerate().skip(1) {
            let m = month_start(*m);
            let last = *months.last().expect("nonempty");
            if m == last {
                continue;
            }
            let next = if last.month() == 12 {
                NaiveDate::from_ymd_opt(last.year() + 1, 1, 1)
            } else {
                NaiveDate::from_ymd_opt(last.year(), last.month() + 1, 1)
            }
            .expect("valid month");
            if m != next {
                return Err(Error::Data(format!("week {} is assigned to {m}, expected {next}", week_starts[i])));
            }
            months.push(m);
            bounds.push(i);
        }
        bounds.push(week_starts.len());
        let cal = Self { weeks: week_starts.to_vec(), months, bounds };
        for t in 0..cal.n_months() {
            let k = cal.weeks_in(t);
            if !(4..=5).contains(&k) {
                return Err(Error::Data(format!("month {} has {k} weeks, expected 4 or 5", cal.months[t])));
            }
        }
        Ok(cal)
    }

    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn months(&self) -> &[NaiveDate] {
        &self.months
    }

    pub fn weeks(&self) -> &[NaiveDate] {
        &self.weeks
    }

    /// `k` for month `t`.
    pub fn weeks_in(&self, t: usize) -> usize {
        self.bounds[t + 1] - self.bounds[t]
    }

    /// Index of the first week of month `t`.
    pub fn first_week(&self, t: usize) -> usize {
        self.bounds[t]
    }

    pub fn month_of_week(&self, w: usize) -> usize {
        self.bounds.partition_point(|&b| b <= w) - 1
    }
}

/// Real-time position: month `t` and optionally week `j` (1-based) of that month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct AsOf {
    pub month: usize,
    pub week: Option<usize>,
}

impl AsOf {
    pub fn month(month: usize) -> Self {
        Self { month, week: None }
    }

    pub fn week(month: usize, week: usize) -> Self {
        Self { month, week: Some(week) }
    }
}

impl std::fmt::Display for AsOf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.week {
            Some(j) => write!(f, "month {} week {j}", self.month),
            None => write!(f, "month {}", self.month),
        }
    }
}

/// Sum of the first `j` weeks of month `t`; NaN if any of them is missing.
pub fn aggregate_weekly(x: &[f64], cal: &WeekCalendar, t: usize, j: usize) -> Result<f64> {
    if t >= cal.n_months() {
        return Err(Error::Data(format!("month {t} is outside the calendar")));
    }
    let k = cal.weeks_in(t);
    if j == 0 || j > k {
        return Err(Error::Data(format!("week {j} requested but month {t} has {k} weeks")));
    }
    if x.len() < cal.first_week(t) + j {
        return Err(Error::Data(format!("weekly series has {} values, calendar needs more", x.len())));
    }
    let s = cal.first_week(t);
    Ok(x[s..s + j].iter().sum())
}

/// Monthly aggregates of a weekly panel through `as_of`, rescaled to `[0, 100]`.
///
/// Months before `as_of.month` are complete; the last month sums weeks `1..=j`
/// (all weeks when `as_of.week` is `None`). Each column is divided by the maximum
/// of its complete-month aggregates and multiplied by 100.
pub fn aggregate_panel(weekly: &Panel, cal: &WeekCalendar, as_of: AsOf) -> Result<Panel> {
    let rows = as_of.month + 1;
    if rows > cal.n_months() {
        return Err(Error::Data(format!("month {} is outside the calendar", as_of.month)));
    }
    let last_j = as_of.week.unwrap_or_else(|| cal.weeks_in(as_of.month));
    let mut out = DMatrix::from_element(rows, weekly.nseries(), f64::NAN);
    for i in 0..weekly.nseries() {
        let col: Vec<f64> = weekly.values().column(i).iter().copied().collect();
        for t in 0..rows {
            let j = if t == as_of.month { last_j } else { cal.weeks_in(t) };
            out[(t, i)] = aggregate_weekly(&col, cal, t, j)?;
        }
    }
    let full = if last_j == cal.weeks_in(as_of.month) { rows } else { rows - 1 };
    rescale_running_max(&mut out, full.max(1));
    Panel::new(out, weekly.names().to_vec(), Frequency::Monthly)
}

/// Divides each column by the maximum over its first `full_rows` finite entries and multiplies by 100.
pub fn rescale_running_max(x: &mut DMatrix<f64>, full_rows: usize) {
    for mut c in x.column_iter_mut() {
        let m = c.iter().take(full_rows).copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if m > 0.0 && m.is_finite() {
            c.scale_mut(100.0 / m);
        }
    }
}

/// Auxiliary panel on its native sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum GtData {
    Monthly(Panel),
    Weekly { weekly: Panel, calendar: WeekCalendar },
}

impl GtData {
    pub fn nseries(&self) -> usize {
        match self {
            GtData::Monthly(p) => p.nseries(),
            GtData::Weekly { weekly, .. } => weekly.nseries(),
        }
    }
}

/// All data over `T` months.
#[derive(Debug, Clone, PartialEq)]
pub struct NowcastData {
    /// Wave estimates, `T × 5`.
    pub y: DMatrix<f64>,
    /// Design standard errors, `T × 5`.
    pub c: DMatrix<f64>,
    pub cc: Option<Vec<f64>>,
    pub gt: Option<GtData>,
}

impl NowcastData {
    pub fn nobs(&self) -> usize {
        self.y.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.nobs();
        if self.y.ncols() != N_WAVES || self.c.shape() != (t, N_WAVES) {
            return Err(Error::Data(format!(
                "labour-force data must be T x {N_WAVES} with matching design errors, got {:?} and {:?}",
                self.y.shape(),
                self.c.shape()
            )));
        }
        if let Some(cc) = &self.cc {
            if cc.len() != t {
                return Err(Error::Data(format!("claimant counts have {} months, expected {t}", cc.len())));
            }
        }
        match &self.gt {
            Some(GtData::Monthly(p)) if p.nobs() != t => {
                Err(Error::Data(format!("monthly auxiliary panel has {} months, expected {t}", p.nobs())))
            }
            Some(GtData::Weekly { weekly, calendar }) if calendar.n_months() < t || weekly.nobs() != calendar.n_weeks() => {
                Err(Error::Data(format!(
                    "weekly panel has {} weeks over {} calendar months; need {} weeks and at least {t} months",
                    weekly.nobs(),
                    calendar.n_months(),
                    calendar.n_weeks()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// A data cell, for membership queries on an [`InformationSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Lfs { month: usize },
    Cc { month: usize },
    GtMonthly { month: usize },
    GtWeekly { week: usize },
}

/// `Ω_{j,t}⁻`: labour-force and claimant data through `t−1`, auxiliary data through week `j` of `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InformationSet {
    pub as_of: AsOf,
}

/// Data visible inside an information set, truncated to months `0..=t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub as_of: AsOf,
    pub y: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub cc: Option<Vec<f64>>,
    /// Monthly auxiliary panel (aggregated and rescaled when weekly).
    pub gt: Option<Panel>,
    /// Weekly auxiliary observations inside the information set.
    pub gt_weekly: Option<Panel>,
}

impl InformationSet {
    pub fn new(as_of: AsOf) -> Self {
        Self { as_of }
    }

    pub fn contains(&self, cell: Cell, cal: Option<&WeekCalendar>) -> bool {
        let t = self.as_of.month;
        match cell {
            Cell::Lfs { month } | Cell::Cc { month } => month < t,
            Cell::GtMonthly { month } => month <= t,
            Cell::GtWeekly { week } => match cal {
                Some(cal) => {
                    let end = cal.first_week(t) + self.as_of.week.unwrap_or_else(|| cal.weeks_in(t));
                    week < end
                }
                None => false,
            },
        }
    }

    /// Copies only the cells inside the information set.
    pub fn snapshot(&self, data: &NowcastData) -> Result<Snapshot> {
        data.validate()?;
        let t = self.as_of.month;
        if t >= data.nobs() {
            return Err(Error::Data(format!("as-of month {t} is beyond the sample of {} months", data.nobs())));
        }
        let rows = t + 1;
        let mut y = data.y.rows(0, rows).into_owned();
        let mut c = data.c.rows(0, rows).into_owned();
        y.row_mut(t).fill(f64::NAN);
        c.row_mut(t).fill(f64::NAN);
        let cc = data.cc.as_ref().map(|v| {
            let mut v = v[..rows].to_vec();
            v[t] = f64::NAN;
            v
        });
        let (gt, gt_weekly) = match &data.gt {
            None => (None, None),
            Some(GtData::Monthly(p)) => {
                if self.as_of.week.is_some() {
                    return Err(Error::Config("weekly positions need a weekly auxiliary panel".into()));
                }
                (Some(p.slice_rows(0, rows)), None)
            }
            Some(GtData::Weekly { weekly, calendar }) => {
                let j = self.as_of.week.unwrap_or_else(|| calendar.weeks_in(t));
                if j == 0 || j > calendar.weeks_in(t) {
                    return Err(Error::Data(format!("week {j} requested but month {t} has {} weeks", calendar.weeks_in(t))));
                }
                let end = calendar.first_week(t) + j;
                let wk = weekly.slice_rows(0, end);
                (Some(aggregate_panel(&wk, calendar, AsOf::week(t, j))?), Some(wk))
            }
        };
        Ok(Snapshot { as_of: self.as_of, y, c, cc, gt, gt_weekly })
    }
}

impl Snapshot {
    /// Every observation of `data`, for in-sample estimation.
    pub fn full(data: &NowcastData) -> Result<Snapshot> {
        data.validate()?;
        let t = data.nobs();
        if t == 0 {
            return Err(Error::Data("no observations".into()));
        }
        let (gt, gt_weekly) = match &data.gt {
            None => (None, None),
            Some(GtData::Monthly(p)) => (Some(p.clone()), None),
            Some(GtData::Weekly { weekly, calendar }) => {
                let end = calendar.first_week(t - 1) + calendar.weeks_in(t - 1);
                let wk = weekly.slice_rows(0, end);
                (Some(aggregate_panel(&wk, calendar, AsOf::month(t - 1))?), Some(wk))
            }
        };
        Ok(Snapshot { as_of: AsOf::month(t - 1), y: data.y.clone(), c: data.c.clone(), cc: data.cc.clone(), gt, gt_weekly })
    }
}

/// Model family compared against the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Variant {
    Baseline,
    Cc,
    Gt,
    CcGt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Cc, Variant::Gt, Variant::CcGt];

    pub fn uses_cc(self) -> bool {
        matches!(self, Variant::Cc | Variant::CcGt)
    }

    pub fn uses_gt(self) -> bool {
        matches!(self, Variant::Gt | Variant::CcGt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Cc => "cc",
            Variant::Gt => "gt",
            Variant::CcGt => "cc_gt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}' (expected baseline, cc, gt or cc_gt)")))
    }
}

/// Estimation settings shared by every variant.
#[derive(Debug, Clone)]
pub struct VariantConfig {
    /// Number of auxiliary factors.
    pub r: usize,
    /// Elastic-net grid; `None` keeps every auxiliary series.
    pub targeting: Option<TargetingGrid>,
    pub elastic_net: ElasticNetOptions,
    /// Fewer selected series than this falls back to the whole panel.
    pub min_selected: usize,
    pub bfgs: BfgsOptions,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            r: 2,
            targeting: Some(TargetingGrid::default()),
            elastic_net: ElasticNetOptions::default(),
            min_selected: 5,
            bfgs: BfgsOptions::default(),
        }
    }
}

/// Model structure and data of a variant before its hyperparameters are estimated.
#[derive(Debug, Clone)]
pub struct PreparedVariant {
    pub variant: Variant,
    pub spec: ModelSpec,
    /// Observation matrix fed to the filter.
    pub data: DMatrix<f64>,
    /// Design standard errors of the sample.
    pub c: DMatrix<f64>,
    pub targeting: Option<TargetingResult>,
    /// Auxiliary columns kept in the model.
    pub gt_columns: Vec<usize>,
    pub decomposition: Option<FactorDecomposition>,
    pub warnings: Vec<String>,
}

impl PreparedVariant {
    pub fn model(&self) -> LfModel {
        LfModel { spec: self.spec.clone(), c: self.c.clone(), all_corr: false }
    }

    /// Optimizer starting values: `init` when it has the right length, moment-based otherwise.
    pub fn start(&self, init: Option<&[f64]>) -> Vec<f64> {
        match init {
            Some(v) if v.len() == self.model().specs().len() => v.to_vec(),
            _ => default_init(&self.spec, &self.data).to_values(&self.spec, false),
        }
    }
}

/// A fitted variant on one sample.
#[derive(Debug, Clone)]
pub struct VariantFit {
    pub prepared: PreparedVariant,
    pub estimate: EstimationResult,
    pub output: FilterOutput<f64>,
    /// The estimate was carried over from an earlier fit.
    pub reused: bool,
}

impl VariantFit {
    pub fn variant(&self) -> Variant {
        self.prepared.variant
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.prepared.spec
    }

    pub fn layout(&self) -> StateLayout {
        self.prepared.spec.layout()
    }

    /// Filtered level, slope and `θ` at period `t`.
    pub fn state_at(&self, t: usize) -> StateEstimate {
        state_estimate(&self.output.filtered_state[t], &self.output.filtered_cov[t], &self.layout())
    }
}

/// Stacks `[y, cc, centered auxiliary columns]` in the column order of [`ModelSpec::p`].
pub fn model_data(snap: &Snapshot, spec: &ModelSpec, gt: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let t = snap.y.nrows();
    let p = spec.p();
    let mut out = DMatrix::from_element(t, p, f64::NAN);
    out.columns_mut(0, N_WAVES).copy_from(&snap.y);
    let mut col = N_WAVES;
    if spec.include_cc {
        let cc = snap.cc.as_ref().ok_or_else(|| Error::Data("claimant-count model needs claimant-count data".into()))?;
        for s in 0..t {
            out[(s, col)] = cc[s];
        }
        col += 1;
    }
    if spec.include_gt {
        let g = gt.ok_or_else(|| Error::Data("auxiliary model needs auxiliary data".into()))?;
        if g.shape() != (t, spec.n_gt()) {
            return Err(Error::Data(format!("auxiliary block is {:?}, expected ({t}, {})", g.shape(), spec.n_gt())));
        }
        out.columns_mut(col, spec.n_gt()).copy_from(g);
    }
    Ok(out)
}

/// Targeting and first-step factor estimation for one variant.
///
/// `slope` is the baseline slope estimate, one value per period; the regression
/// excludes the last period, whose slope is itself a nowcast.
pub fn prepare_variant(snap: &Snapshot, variant: Variant, cfg: &VariantConfig, slope: Option<&[f64]>) -> Result<PreparedVariant> {
    let mut warnings = Vec::new();
    let mut targeting = None;
    let mut gt_columns = Vec::new();
    let mut decomposition = None;
    let mut gt_block = None;
    let spec = if variant.uses_gt() && cfg.r > 0 {
        let gt = snap.gt.as_ref().ok_or_else(|| Error::Data(format!("variant {} needs auxiliary data", variant.name())))?;
        let n_all = gt.nseries();
        gt_columns = (0..n_all).collect();
        if let (Some(grid), Some(slope)) = (&cfg.targeting, slope) {
            let rows = gt.nobs() - 1;
            if slope.len() < rows {
                return Err(Error::Data(format!("slope has {} periods, targeting needs {rows}", slope.len())));
            }
            let res = target_panel(&slope[..rows], &gt.slice_rows(0, rows), grid, &cfg.elastic_net)?;
            if res.selected.len() >= cfg.min_selected.max(cfg.r + 1) {
                gt_columns = res.selected.clone();
            } else {
                warnings.push(format!("targeting selected {} series; keeping all {n_all}", res.selected.len()));
            }
            targeting = Some(res);
        }
        let x_model = gt.select_columns(&gt_columns);
        let opts = TwoStepOptions {
            estimation_panel: snap.gt_weekly.as_ref().map(|w| w.select_columns(&gt_columns)),
            i1_idio_mask: None,
            include_cc: variant.uses_cc(),
        };
        let (spec, dec) = two_step(&x_model, cfg.r, &opts)?;
        let dec = dec.ok_or_else(|| Error::Estimation("first step returned no decomposition".into()))?;
        gt_block = Some(dec.center_levels(x_model.values()));
        decomposition = Some(dec);
        spec
    } else if variant.uses_cc() {
        ModelSpec::with_cc()
    } else {
        ModelSpec::baseline()
    };
    let data = model_data(snap, &spec, gt_block.as_ref())?;
    Ok(PreparedVariant { variant, spec, data, c: snap.c.clone(), targeting, gt_columns, decomposition, warnings })
}

/// Filters a prepared variant at given hyperparameter values.
pub fn filter_prepared(prepared: &PreparedVariant, estimate: EstimationResult, reused: bool) -> Result<VariantFit> {
    let ssm = prepared.model().build(&estimate.values)?;
    let output = filter_with(&ssm, &prepared.data, FilterOptions::default())?;
    Ok(VariantFit { prepared: prepared.clone(), estimate, output, reused })
}

/// Maximum-likelihood fit of a prepared variant, warm-started from `init` when given.
pub fn fit_prepared(prepared: &PreparedVariant, init: Option<&[f64]>, bfgs: &BfgsOptions) -> Result<VariantFit> {
    let model = prepared.model();
    let v0 = prepared.start(init);
    let fixed = vec![None; v0.len()];
    let fit = fit_model(&model, &prepared.data, &v0, &fixed, bfgs)?;
    let estimate = EstimationResult::from_fit(&prepared.spec, false, fit);
    filter_prepared(prepared, estimate, false)
}

/// Targeting, factor extraction, ML fit and filter of one variant on a snapshot.
pub fn estimate_variant(
    snap: &Snapshot,
    variant: Variant,
    cfg: &VariantConfig,
    slope: Option<&[f64]>,
    init: Option<&[f64]>,
) -> Result<VariantFit> {
    let prepared = prepare_variant(snap, variant, cfg, slope)?;
    fit_prepared(&prepared, init, &cfg.bfgs)
}

/// Smoothed slope of a fitted model, one value per period.
pub fn smoothed_slope(fit: &VariantFit) -> Result<Vec<f64>> {
    let model = fit.prepared.model().build(&fit.estimate.values)?;
    let sm = smooth(&model, &fit.prepared.data, 1e7)?;
    Ok(sm.state.iter().map(|a| a[StateLayout::SLOPE]).collect())
}

/// Point estimates and variances of `L`, `R` and `θ = L + Σ S_l`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StateEstimate {
    pub level: f64,
    pub slope: f64,
    pub theta: f64,
    pub var_level: f64,
    pub var_slope: f64,
    pub var_theta: f64,
}

pub fn state_estimate(a: &DVector<f64>, p: &DMatrix<f64>, layout: &StateLayout) -> StateEstimate {
    let w = layout.theta_weights();
    let (l, r) = (StateLayout::LEVEL, StateLayout::SLOPE);
    StateEstimate {
        level: a[l],
        slope: a[r],
        theta: w.dot(a),
        var_level: p[(l, l)],
        var_slope: p[(r, r)],
        var_theta: (w.transpose() * p * &w)[(0, 0)],
    }
}

/// Filtered `θ̂_t` and its variance `w′P_{t|t}w` for every period.
pub fn theta_estimate(out: &FilterOutput<f64>, layout: &StateLayout) -> Vec<(f64, f64)> {
    (0..out.len())
        .map(|t| {
            let s = state_estimate(&out.filtered_state[t], &out.filtered_cov[t], layout);
            (s.theta, s.var_theta)
        })
        .collect()
}

/// Averages of estimated variances for `L`, `R` and `θ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Measures {
    pub level: f64,
    pub slope: f64,
    pub theta: f64,
}

impl Measures {
    fn from_estimates<'a>(it: impl IntoIterator<Item = &'a StateEstimate>) -> Option<Self> {
        let (mut l, mut r, mut th, mut n) = (0.0, 0.0, 0.0, 0usize);
        for s in it {
            l += s.var_level;
            r += s.var_slope;
            th += s.var_theta;
            n += 1;
        }
        (n > 0).then(|| {
            let n = n as f64;
            Self { level: l / n, slope: r / n, theta: th / n }
        })
    }

    pub fn ratio(&self, base: &Measures) -> Measures {
        Measures { level: self.level / base.level, slope: self.slope / base.slope, theta: self.theta / base.theta }
    }

    pub fn all_finite_positive(&self) -> bool {
        [self.level, self.slope, self.theta].iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Accuracy of a model relative to the baseline.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AccuracyReport {
    pub model: Measures,
    pub baseline: Measures,
    pub relative: Measures,
    /// Relative measures by week of the month (week `j` at index `j − 1`) for weekly schedules.
    pub per_week: Vec<Measures>,
}

/// In-sample `(1/(T−d)) Σ_{t>d} P_{t|t}` relative to the baseline.
pub fn insample_accuracy(
    model: &FilterOutput<f64>,
    model_layout: &StateLayout,
    baseline: &FilterOutput<f64>,
    baseline_layout: &StateLayout,
    d: usize,
) -> Result<AccuracyReport> {
    if model.len() != baseline.len() {
        return Err(Error::Data(format!("{} vs {} periods", model.len(), baseline.len())));
    }
    if model.len() <= d {
        return Err(Error::Data(format!("{} periods leave nothing after the first {d}", model.len())));
    }
    let avg = |out: &FilterOutput<f64>, lay: &StateLayout| {
        let est: Vec<StateEstimate> =
            (d..out.len()).map(|t| state_estimate(&out.filtered_state[t], &out.filtered_cov[t], lay)).collect();
        Measures::from_estimates(&est).expect("nonempty window")
    };
    let m = avg(model, model_layout);
    let b = avg(baseline, baseline_layout);
    Ok(AccuracyReport { model: m, baseline: b, relative: m.ratio(&b), per_week: Vec::new() })
}

/// In-sample accuracy with the baseline's diffuse window `d = 17`.
pub fn insample_accuracy_default(model: &VariantFit, baseline: &VariantFit) -> Result<AccuracyReport> {
    insample_accuracy(&model.output, &model.layout(), &baseline.output, &baseline.layout(), D_BASELINE)
}

/// Cadence of the recursive schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Step {
    Monthly,
    /// Every week of the month for weekly auxiliary data.
    Weekly,
}

#[derive(Debug, Clone)]
pub struct NowcastOptions {
    /// First out-of-sample month (zero-based).
    pub start: usize,
    /// Number of out-of-sample months `h`.
    pub h: usize,
    pub step: Step,
    /// Start each refit from the previous optimum.
    pub warm_start: bool,
    pub config: VariantConfig,
}

/// One nowcast at a real-time position.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NowcastPoint {
    pub as_of: AsOf,
    pub estimate: StateEstimate,
    /// The fit failed or did not converge and the previous optimum was used.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VariantNowcast {
    pub variant: Variant,
    pub points: Vec<NowcastPoint>,
    /// Per month: point of the last position and variances averaged over the month's positions.
    pub monthly: Vec<(usize, StateEstimate)>,
    pub report: AccuracyReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NowcastRun {
    pub baseline: Vec<NowcastPoint>,
    pub variants: Vec<VariantNowcast>,
}

/// Fits at one position, falling back to `prev` when the optimizer fails.
fn step_fit(
    snap: &Snapshot,
    variant: Variant,
    cfg: &VariantConfig,
    slope: Option<&[f64]>,
    prev: Option<&[f64]>,
    warm: bool,
    warnings: &mut Vec<String>,
) -> Result<VariantFit> {
    let prepared = prepare_variant(snap, variant, cfg, slope)?;
    warnings.extend(prepared.warnings.iter().map(|w| format!("{}: {w}", snap.as_of)));
    let init = if warm { prev } else { None };
    let attempt = fit_prepared(&prepared, init, &cfg.bfgs);
    let fallback = |why: String, warnings: &mut Vec<String>| -> Result<Option<VariantFit>> {
        let Some(p) = prev.filter(|p| p.len() == prepared.model().specs().len()) else {
            return Ok(None);
        };
        warnings.push(format!("{} {}: {why}; reusing the previous optimum", snap.as_of, variant.name()));
        let ll = crate::ssm::filter_with(&prepared.model().build(p)?, &prepared.data, FilterOptions::loglik_only())?.loglik;
        let est = EstimationResult {
            params: lf_model::HyperParams::from_values(&prepared.spec, false, p),
            names: prepared.model().specs().iter().map(|s| s.name.clone()).collect(),
            values: p.to_vec(),
            loglik: ll,
            converged: false,
            iterations: 0,
            grad_norm: f64::NAN,
            warnings: Vec::new(),
        };
        filter_prepared(&prepared, est, true).map(Some)
    };
    match attempt {
        Ok(fit) if fit.estimate.converged => Ok(fit),
        Ok(fit) => Ok(fallback("fit did not converge".into(), warnings)?.unwrap_or(fit)),
        Err(e) => match fallback(e.to_string(), warnings)? {
            Some(fit) => Ok(fit),
            None => Err(e),
        },
    }
}

/// Recursive real-time nowcasts over months `start..start+h`.
///
/// At every position the information set is rebuilt, the baseline is refitted
/// (its smoothed slope drives targeting), then each variant repeats targeting,
/// first-step factor estimation, ML estimation and filtering. The nowcast is the
/// filtered state at the current month.
pub fn recursive_nowcast(data: &NowcastData, variants: &[Variant], opts: &NowcastOptions) -> Result<NowcastRun> {
    data.validate()?;
    if opts.h == 0 {
        return Err(Error::Config("nowcast window is empty".into()));
    }
    if opts.start + opts.h > data.nobs() {
        return Err(Error::Config(format!(
            "window {}..{} exceeds the sample of {} months",
            opts.start,
            opts.start + opts.h,
            data.nobs()
        )));
    }
    if opts.start <= D_BASELINE + 2 {
        return Err(Error::Config(format!("nowcasting must start after month {}", D_BASELINE + 2)));
    }
    let weekly_cal = match (&data.gt, opts.step) {
        (Some(GtData::Weekly { calendar, .. }), Step::Weekly) => Some(calendar),
        (_, Step::Weekly) if variants.iter().any(|v| v.uses_gt()) => {
            return Err(Error::Config("a weekly schedule needs weekly auxiliary data".into()))
        }
        _ => None,
    };
    let cfg = &opts.config;
    let mut base_prev: Option<Vec<f64>> = None;
    let mut prev: Vec<Option<Vec<f64>>> = vec![None; variants.len()];
    let mut baseline_points = Vec::new();
    let mut base_warn = Vec::new();
    let mut out: Vec<VariantNowcast> = variants
        .iter()
        .map(|&v| VariantNowcast {
            variant: v,
            points: Vec::new(),
            monthly: Vec::new(),
            report: AccuracyReport {
                model: Measures { level: f64::NAN, slope: f64::NAN, theta: f64::NAN },
                baseline: Measures { level: f64::NAN, slope: f64::NAN, theta: f64::NAN },
                relative: Measures { level: f64::NAN, slope: f64::NAN, theta: f64::NAN },
                per_week: Vec::new(),
            },
            warnings: Vec::new(),
        })
        .collect();

    for t in opts.start..opts.start + opts.h {
        let month_snap = InformationSet::new(AsOf::month(t)).snapshot(data)?;
        let base = step_fit(&month_snap, Variant::Baseline, cfg, None, base_prev.as_deref(), opts.warm_start, &mut base_warn)?;
        base_prev = Some(base.estimate.values.clone());
        baseline_points.push(NowcastPoint { as_of: AsOf::month(t), estimate: base.state_at(t), flagged: base.reused });
        let needs_slope = variants.iter().any(|v| v.uses_gt()) && cfg.targeting.is_some();
        let slope = if needs_slope { Some(smoothed_slope(&base)?) } else { None };

        for (k, &v) in variants.iter().enumerate() {
            let positions: Vec<AsOf> = match (weekly_cal, v.uses_gt()) {
                (Some(cal), true) => (1..=cal.weeks_in(t)).map(|j| AsOf::week(t, j)).collect(),
                _ => vec![AsOf::month(t)],
            };
            let mut month_points = Vec::new();
            for pos in positions {
                let point = if v == Variant::Baseline {
                    NowcastPoint { as_of: pos, estimate: base.state_at(t), flagged: base.reused }
                } else {
                    let snap = if pos == AsOf::month(t) { month_snap.clone() } else { InformationSet::new(pos).snapshot(data)? };
                    let fit = step_fit(&snap, v, cfg, slope.as_deref(), prev[k].as_deref(), opts.warm_start, &mut out[k].warnings)?;
                    prev[k] = Some(fit.estimate.values.clone());
                    NowcastPoint { as_of: pos, estimate: fit.state_at(t), flagged: fit.reused }
                };
                month_points.push(point);
            }
            let mut est = month_points.last().expect("at least one position").estimate;
            let avg = Measures::from_estimates(month_points.iter().map(|p| &p.estimate)).expect("nonempty");
            est.var_level = avg.level;
            est.var_slope = avg.slope;
            est.var_theta = avg.theta;
            out[k].monthly.push((t, est));
            out[k].points.extend(month_points);
        }
    }

    let base_m = Measures::from_estimates(baseline_points.iter().map(|p| &p.estimate)).expect("h > 0");
    for v in &mut out {
        let m = Measures::from_estimates(v.monthly.iter().map(|(_, e)| e)).expect("h > 0");
        let mut per_week = Vec::new();
        if weekly_cal.is_some() && v.variant.uses_gt() {
            for j in 1..=5 {
                let wk = Measures::from_estimates(v.points.iter().filter(|p| p.as_of.week == Some(j)).map(|p| &p.estimate));
                match wk {
                    Some(w) => per_week.push(w.ratio(&base_m)),
                    None => break,
                }
            }
        }
        v.report = AccuracyReport { model: m, baseline: base_m, relative: m.ratio(&base_m), per_week };
        if v.variant == Variant::Baseline {
            v.warnings.extend(base_warn.iter().cloned());
        }
    }
    Ok(NowcastRun { baseline: baseline_points, variants: out })
}

/// A full-sample fit with its in-sample accuracy relative to the baseline.
#[derive(Debug, Clone)]
pub struct InsampleFit {
    pub fit: VariantFit,
    pub report: AccuracyReport,
}

/// Fits the baseline and every requested variant on the full sample.
///
/// Targeting uses the smoothed baseline slope.
pub fn estimate_insample(data: &NowcastData, variants: &[Variant], cfg: &VariantConfig) -> Result<Vec<InsampleFit>> {
    let snap = Snapshot::full(data)?;
    let base = estimate_variant(&snap, Variant::Baseline, cfg, None, None)?;
    let slope = if variants.iter().any(|v| v.uses_gt()) && cfg.targeting.is_some() { Some(smoothed_slope(&base)?) } else { None };
    variants
        .iter()
        .map(|&v| {
            let fit = if v == Variant::Baseline { base.clone() } else { estimate_variant(&snap, v, cfg, slope.as_deref(), None)? };
            let report = insample_accuracy_default(&fit, &base)?;
            Ok(InsampleFit { fit, report })
        })
        .collect()
}
