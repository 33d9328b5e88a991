//! CSV data bundles, key-value configuration, output tables and a synthetic fixture.
//!
//! Input files live in one directory:
//!
//! | file | columns |
//! |---|---|
//! | `lfs.csv` | `date, y1..y5, se1..se5` |
//! | `cc.csv` | `date, value` |
//! | `gt_monthly.csv` | `date, <term>...` |
//! | `gt_weekly.csv` | `date, <term>...` (week start dates) |
//! | `calendar.csv` | `week_start, month` |
//!
//! Dates are ISO-8601 (`YYYY-MM-DD`; months are dated on their first day) and
//! missing cells are empty strings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lf_model::{self, CcParams, HyperParams, ModelSpec, N_WAVES};
use crate::nowcast::{GtData, NowcastData, WeekCalendar};
use crate::panel::{Frequency, Panel};

/// Observed data with date indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    /// First day of each month.
    pub months: Vec<NaiveDate>,
    /// Wave estimates, `T × 5`.
    pub y: DMatrix<f64>,
    /// Design standard errors, `T × 5`.
    pub se: DMatrix<f64>,
    pub cc: Option<Vec<f64>>,
    pub gt_monthly: Option<Panel>,
    /// Weekly panel and its week start dates.
    pub gt_weekly: Option<(Vec<NaiveDate>, Panel)>,
    pub calendar: Option<WeekCalendar>,
    /// Auxiliary series dropped while loading, with the reason.
    pub dropped: Vec<(String, String)>,
}

fn next_month(d: NaiveDate) -> NaiveDate {
    if d.month() == 12 {
        NaiveDate::from_ymd_opt(d.year() + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(d.year(), d.month() + 1, 1)
    }
    .expect("valid month")
}

fn parse_date(s: &str, file: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Data(format!("{file} row {row}: bad date '{s}': {e}")))
}

fn parse_cell(s: &str, file: &str, row: usize, col: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Data(format!("{file} row {row}, column {col}: '{s}' is not a number")))
}

fn fmt_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// A parsed CSV: header, dates and a numeric body.
struct Table {
    header: Vec<String>,
    dates: Vec<NaiveDate>,
    values: DMatrix<f64>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{file}: {e}")))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("{file} row {row}: {e}")))?;
        if rec.len() != header.len() + 1 {
            return Err(Error::Data(format!("{file} row {row}: {} fields, expected {}", rec.len(), header.len() + 1)));
        }
        dates.push(parse_date(&rec[0], &file, row)?);
        let vals: Result<Vec<f64>> = header.iter().enumerate().map(|(j, h)| parse_cell(&rec[j + 1], &file, row, h)).collect();
        rows.push(vals?);
    }
    for (i, w) in dates.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::Data(format!("{file} row {}: date {} does not follow {}", i + 3, w[1], w[0])));
        }
    }
    let values = DMatrix::from_fn(rows.len(), header.len(), |r, c| rows[r][c]);
    Ok(Table { header, dates, values })
}

fn write_table(path: &Path, first: &str, header: &[String], dates: &[NaiveDate], values: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut h = vec![first.to_string()];
    h.extend(header.iter().cloned());
    w.write_record(&h).map_err(|e| Error::Data(e.to_string()))?;
    for (t, d) in dates.iter().enumerate() {
        let mut rec = vec![d.format("%Y-%m-%d").to_string()];
        rec.extend((0..values.ncols()).map(|j| fmt_cell(values[(t, j)])));
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

fn check_months(dates: &[NaiveDate], file: &str) -> Result<()> {
    for (i, d) in dates.iter().enumerate() {
        if d.day() != 1 {
            return Err(Error::Data(format!("{file} row {}: monthly dates must be the first of the month, got {d}", i + 2)));
        }
    }
    for (i, w) in dates.windows(2).enumerate() {
        if w[1] != next_month(w[0]) {
            return Err(Error::Data(format!("{file} row {}: gap between {} and {}", i + 3, w[0], w[1])));
        }
    }
    Ok(())
}

/// Pads a monthly table with missing rows up to `months`, which its dates must prefix.
fn align(tab: &Table, months: &[NaiveDate], file: &str) -> Result<DMatrix<f64>> {
    if tab.dates.is_empty() || tab.dates[0] != months[0] {
        return Err(Error::Data(format!("{file} must start in {}", months[0])));
    }
    if let Some(i) = (0..tab.dates.len()).find(|&i| tab.dates[i] != months[i]) {
        return Err(Error::Data(format!("{file} row {}: expected {}, got {}", i + 2, months[i], tab.dates[i])));
    }
    let mut out = DMatrix::from_element(months.len(), tab.values.ncols(), f64::NAN);
    out.rows_mut(0, tab.values.nrows()).copy_from(&tab.values);
    Ok(out)
}

fn check_gt(panel: &Panel, file: &str) -> Result<()> {
    for j in 0..panel.nseries() {
        for t in 0..panel.nobs() {
            let v = panel.values()[(t, j)];
            if v.is_finite() && !(0.0..=100.0).contains(&v) {
                return Err(Error::Data(format!(
                    "{file} row {}, column {}: value {v} outside [0, 100]",
                    t + 2,
                    panel.names()[j]
                )));
            }
        }
    }
    Ok(())
}

/// Keeps series with zeros in at most half of their cells.
fn drop_sparse(panel: &Panel, dropped: &mut Vec<(String, String)>, file: &str) -> Panel {
    let keep: Vec<usize> = (0..panel.nseries())
        .filter(|&j| {
            let col = panel.values().column(j);
            let t = col.iter().filter(|v| v.is_finite()).count();
            let zeros = col.iter().filter(|v| **v == 0.0).count();
            if 2 * zeros > t {
                let reason = format!("{file}: {zeros} of {t} values are zero");
                log::info!("dropping {}: {reason}", panel.names()[j]);
                dropped.push((panel.names()[j].clone(), reason));
                false
            } else {
                true
            }
        })
        .collect();
    panel.select_columns(&keep)
}

impl DataBundle {
    pub fn nobs(&self) -> usize {
        self.months.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.nobs();
        check_months(&self.months, "lfs.csv")?;
        if self.y.shape() != (t, N_WAVES) || self.se.shape() != (t, N_WAVES) {
            return Err(Error::Data(format!("lfs.csv must have {N_WAVES} estimate and {N_WAVES} s.e. columns")));
        }
        for s in 0..t {
            for j in 0..N_WAVES {
                let (y, c) = (self.y[(s, j)], self.se[(s, j)]);
                if y.is_finite() && !(c.is_finite() && c > 0.0) {
                    return Err(Error::Data(format!("lfs.csv row {}, column se{}: standard error must be positive", s + 2, j + 1)));
                }
            }
        }
        if let Some(cc) = &self.cc {
            if cc.len() != t {
                return Err(Error::Data(format!("cc.csv has {} months, lfs.csv has {t}", cc.len())));
            }
        }
        if let Some(gt) = &self.gt_monthly {
            if gt.nobs() != t {
                return Err(Error::Data(format!("gt_monthly.csv has {} months, lfs.csv has {t}", gt.nobs())));
            }
            check_gt(gt, "gt_monthly.csv")?;
        }
        if let Some((weeks, gt)) = &self.gt_weekly {
            check_gt(gt, "gt_weekly.csv")?;
            let cal = self.calendar.as_ref().ok_or_else(|| Error::Data("weekly data needs a calendar".into()))?;
            if cal.weeks() != weeks.as_slice() || gt.nobs() != weeks.len() {
                return Err(Error::Data("calendar weeks do not match gt_weekly.csv".into()));
            }
            if cal.months().first() != self.months.first() || cal.n_months() < t {
                return Err(Error::Data("calendar does not cover the months of lfs.csv".into()));
            }
        }
        Ok(())
    }

    /// Data for the nowcasting routines; `weekly` selects the weekly auxiliary panel.
    pub fn to_nowcast_data(&self, weekly: bool) -> Result<NowcastData> {
        let gt = if weekly {
            let (_, p) = self.gt_weekly.as_ref().ok_or_else(|| Error::Data("no weekly auxiliary data (gt_weekly.csv)".into()))?;
            let calendar = self.calendar.clone().ok_or_else(|| Error::Data("weekly data needs a calendar".into()))?;
            Some(GtData::Weekly { weekly: p.clone(), calendar })
        } else {
            self.gt_monthly.clone().map(GtData::Monthly)
        };
        let data = NowcastData { y: self.y.clone(), c: self.se.clone(), cc: self.cc.clone(), gt };
        data.validate()?;
        Ok(data)
    }

    /// Model data `[y, cc?]` for the labour-force models without auxiliary panels.
    pub fn lfs_matrix(&self, with_cc: bool) -> Result<DMatrix<f64>> {
        let t = self.nobs();
        let extra = usize::from(with_cc);
        let mut out = DMatrix::from_element(t, N_WAVES + extra, f64::NAN);
        out.columns_mut(0, N_WAVES).copy_from(&self.y);
        if with_cc {
            let cc = self.cc.as_ref().ok_or_else(|| Error::Data("no claimant-count data (cc.csv)".into()))?;
            out.set_column(N_WAVES, &DVector::from_column_slice(cc));
        }
        Ok(out)
    }
}

/// Loads the bundle in `dir`; only `lfs.csv` is required.
pub fn load_bundle(dir: &Path) -> Result<DataBundle> {
    let lfs = read_table(&dir.join("lfs.csv"))?;
    let want: Vec<String> = (1..=N_WAVES).map(|j| format!("y{j}")).chain((1..=N_WAVES).map(|j| format!("se{j}"))).collect();
    if lfs.header != want {
        return Err(Error::Data(format!("lfs.csv header must be date,{}", want.join(","))));
    }
    let mut dropped = Vec::new();
    let read_opt = |name: &str| -> Result<Option<Table>> {
        let path = dir.join(name);
        if path.exists() {
            read_table(&path).map(Some)
        } else {
            Ok(None)
        }
    };
    let cc_tab = read_opt("cc.csv")?;
    let gtm_tab = read_opt("gt_monthly.csv")?;
    // the longest monthly file defines the months; shorter ones end early (jagged edge)
    let mut months = lfs.dates.clone();
    let mut source = "lfs.csv";
    for (tab, name) in [(&cc_tab, "cc.csv"), (&gtm_tab, "gt_monthly.csv")] {
        if let Some(tab) = tab.as_ref().filter(|t| t.dates.len() > months.len()) {
            months = tab.dates.clone();
            source = name;
        }
    }
    if months.is_empty() {
        return Err(Error::Data("lfs.csv has no rows".into()));
    }
    check_months(&months, source)?;
    let lfs_values = align(&lfs, &months, "lfs.csv")?;
    let y = lfs_values.columns(0, N_WAVES).into_owned();
    let se = lfs_values.columns(N_WAVES, N_WAVES).into_owned();

    let cc = match cc_tab {
        Some(tab) => {
            if tab.header.len() != 1 {
                return Err(Error::Data("cc.csv must have columns date,value".into()));
            }
            Some(align(&tab, &months, "cc.csv")?.column(0).iter().copied().collect())
        }
        None => None,
    };

    let gt_monthly = match gtm_tab {
        Some(tab) => {
            let p = Panel::new(align(&tab, &months, "gt_monthly.csv")?, tab.header, Frequency::Monthly)?;
            check_gt(&p, "gt_monthly.csv")?;
            Some(drop_sparse(&p, &mut dropped, "gt_monthly.csv"))
        }
        None => None,
    };

    let (gt_weekly, calendar) = if dir.join("gt_weekly.csv").exists() {
        let tab = read_table(&dir.join("gt_weekly.csv"))?;
        let p = Panel::new(tab.values, tab.header, Frequency::Weekly)?;
        check_gt(&p, "gt_weekly.csv")?;
        let p = drop_sparse(&p, &mut dropped, "gt_weekly.csv");
        let cal = if dir.join("calendar.csv").exists() {
            let path = dir.join("calendar.csv");
            let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::Data(format!("calendar.csv: {e}")))?;
            let (mut wk, mut mo) = (Vec::new(), Vec::new());
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| Error::Data(format!("calendar.csv row {}: {e}", i + 2)))?;
                if rec.len() != 2 {
                    return Err(Error::Data(format!("calendar.csv row {}: expected week_start,month", i + 2)));
                }
                wk.push(parse_date(&rec[0], "calendar.csv", i + 2)?);
                mo.push(parse_date(&rec[1], "calendar.csv", i + 2)?);
            }
            if wk != tab.dates {
                return Err(Error::Data("calendar.csv weeks differ from gt_weekly.csv".into()));
            }
            WeekCalendar::from_assignments(&wk, &mo)?
        } else {
            WeekCalendar::majority_day(&tab.dates)?
        };
        (Some((tab.dates, p)), Some(cal))
    } else {
        (None, None)
    };

    let bundle = DataBundle { months, y, se, cc, gt_monthly, gt_weekly, calendar, dropped };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes every component of `bundle` into `dir` in the format read by [`load_bundle`].
pub fn write_bundle(bundle: &DataBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut lfs = DMatrix::from_element(bundle.nobs(), 2 * N_WAVES, f64::NAN);
    lfs.columns_mut(0, N_WAVES).copy_from(&bundle.y);
    lfs.columns_mut(N_WAVES, N_WAVES).copy_from(&bundle.se);
    let header: Vec<String> = (1..=N_WAVES).map(|j| format!("y{j}")).chain((1..=N_WAVES).map(|j| format!("se{j}"))).collect();
    write_table(&dir.join("lfs.csv"), "date", &header, &bundle.months, &lfs)?;
    if let Some(cc) = &bundle.cc {
        write_table(&dir.join("cc.csv"), "date", &["value".to_string()], &bundle.months, &DMatrix::from_column_slice(cc.len(), 1, cc))?;
    }
    if let Some(gt) = &bundle.gt_monthly {
        write_table(&dir.join("gt_monthly.csv"), "date", gt.names(), &bundle.months, gt.values())?;
    }
    if let Some((weeks, gt)) = &bundle.gt_weekly {
        write_table(&dir.join("gt_weekly.csv"), "date", gt.names(), weeks, gt.values())?;
        if let Some(cal) = &bundle.calendar {
            let mut w = csv::Writer::from_path(dir.join("calendar.csv")).map_err(|e| Error::Data(e.to_string()))?;
            w.write_record(["week_start", "month"]).map_err(|e| Error::Data(e.to_string()))?;
            for (i, wk) in cal.weeks().iter().enumerate() {
                let m = cal.months()[cal.month_of_week(i)];
                w.write_record([wk.format("%Y-%m-%d").to_string(), m.format("%Y-%m-%d").to_string()])
                    .map_err(|e| Error::Data(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::Data(e.to_string()))?;
        }
    }
    Ok(())
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Plain-text `key = value` configuration; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key '{k}'", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Entries of `other` override those of `self`.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key '{key}': cannot parse '{v}'"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) if v.trim().is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<T>().map_err(|_| Error::Config(format!("config key '{key}': cannot parse '{s}'"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Canonical text, sorted by key.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Shape of the synthetic fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub t: usize,
    pub n_gt: usize,
    /// Auxiliary series unrelated to the factors.
    pub n_noise: usize,
    pub weekly: bool,
    pub start: NaiveDate,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { t: 185, n_gt: 40, n_noise: 10, weekly: true, start: NaiveDate::from_ymd_opt(2004, 1, 1).expect("valid date") }
    }
}

/// Hyperparameters used to simulate the fixture.
pub fn fixture_params() -> HyperParams {
    HyperParams {
        sigma_r_y: 1.5,
        sigma_omega_y: 0.6,
        sigma_lambda: 1.2,
        sigma_nu: [1.0, 0.9, 0.9, 0.8, 0.8],
        delta: 0.3,
        sigma_l_y: 0.0,
        cc: Some(CcParams { sigma_r: 1.2, sigma_omega: 0.5, sigma_eps: 2.0, rho: 0.8, sigma_l: 0.0 }),
        rho_gt: vec![0.8, 0.2],
        rho_cc_gt: Some(vec![0.6, 0.1]),
        kappa: Vec::new(),
    }
}

/// Weeks (Monday starts) whose majority-day month lies in `months`.
fn weeks_covering(first: NaiveDate, n_months: usize) -> Vec<NaiveDate> {
    let mut last = first;
    for _ in 0..n_months {
        last = next_month(last);
    }
    let mut d = first - Duration::days(6);
    while d.weekday() != chrono::Weekday::Mon || d + Duration::days(3) < first {
        d += Duration::days(1);
    }
    let mut out = Vec::new();
    while d + Duration::days(3) < last {
        out.push(d);
        d += Duration::days(7);
    }
    out
}

/// A bundle simulated from the full labour-force model with claimant counts and
/// two auxiliary factors, shaped like a national labour-force survey.
pub fn synthetic_bundle(seed: u64, opts: &FixtureOptions) -> Result<DataBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = opts.t;
    let n = opts.n_gt;
    if n < opts.n_noise + 2 {
        return Err(Error::Config("fixture needs at least two informative auxiliary series".into()));
    }
    let r = 2;
    let n_inf = n - opts.n_noise;
    let loadings = DMatrix::from_fn(n, r, |i, k| {
        if i >= n_inf {
            0.0
        } else if k == 0 {
            rng.gen_range(0.5..2.0)
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    let psi = DVector::from_fn(n, |_, _| rng.gen_range(0.5..3.0));
    let spec = ModelSpec::with_gt(loadings, psi, true);
    let mut c = DMatrix::from_fn(t, N_WAVES, |_, j| if j == 0 { 10.0 } else { 13.0 } * rng.gen_range(0.95..1.05));
    let hp = fixture_params();
    let model = lf_model::build(&spec, &hp, &c)?;
    let lay = spec.layout();
    let start = DVector::zeros(lay.m);
    let (states, mut obs) = crate::ssm::simulate(&model, t, &start, &mut rng)?;
    // shift so the true levels stay positive
    let floor = |col: usize, target: f64| target - states.column(col).min();
    let shift_y = floor(0, 400.0);
    obs.columns_mut(0, N_WAVES).add_scalar_mut(shift_y);
    if let Some(o) = lay.cc {
        let shift = floor(o, 300.0);
        obs.column_mut(N_WAVES).add_scalar_mut(shift);
    }

    let months: Vec<NaiveDate> = std::iter::successors(Some(opts.start), |d| Some(next_month(*d))).take(t).collect();
    let y = obs.columns(0, N_WAVES).into_owned();
    let cc: Vec<f64> = obs.column(N_WAVES).iter().copied().collect();
    let mut gt = obs.columns(N_WAVES + 1, n).into_owned();
    // affine map of each series into [2, 98]
    for mut col in gt.column_iter_mut() {
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(1e-9);
        col.apply(|v| *v = 2.0 + 96.0 * (*v - lo) / span);
    }
    let names: Vec<String> = (1..=n).map(|i| format!("term{i:02}")).collect();

    let (gt_weekly, calendar) = if opts.weekly {
        let weeks = weeks_covering(opts.start, t);
        let cal = WeekCalendar::majority_day(&weeks)?;
        let mut wk = DMatrix::zeros(weeks.len(), n);
        for i in 0..n {
            for (w, _) in weeks.iter().enumerate() {
                let m = cal.month_of_week(w);
                let k = cal.weeks_in(m) as f64;
                wk[(w, i)] = (gt[(m, i)] / k * (1.0 + 0.05 * rng.gen_range(-1.0..1.0))).max(0.0);
            }
            let mx = wk.column(i).max();
            wk.column_mut(i).apply(|v| *v = (*v * 100.0 / mx).min(100.0));
        }
        (Some((weeks, Panel::new(wk, names.clone(), Frequency::Weekly)?)), Some(cal))
    } else {
        (None, None)
    };
    for v in c.iter_mut() {
        *v = (*v * 1e6).round() / 1e6;
    }
    let bundle = DataBundle {
        months,
        y,
        se: c,
        cc: Some(cc),
        gt_monthly: Some(Panel::new(gt, names, Frequency::Monthly)?),
        gt_weekly,
        calendar,
        dropped: Vec::new(),
    };
    bundle.validate()?;
    Ok(bundle)
}
