use anyhow::{bail, Context, Result};
use nowcast_core::diagnostics::residual_normality_report;
use nowcast_core::factors::{ic_bai_ng, pca_nonstationary};
use nowcast_core::io::{load_bundle, synthetic_bundle, write_bundle, write_rows, DataBundle, FixtureOptions};
use nowcast_core::mcsim::{run_lr_null, run_table2, McOptions, Regime};
use nowcast_core::mle::{default_init, lr_test, BfgsOptions, Hypothesis};
use nowcast_core::nowcast::{
    aggregate_panel, estimate_insample, estimate_variant, AsOf, prepare_variant, recursive_nowcast, smoothed_slope, GtData, NowcastData,
    NowcastOptions, Snapshot, Step, Variant, VariantConfig,
};
use nowcast_core::panel::Panel;
use nowcast_core::stationarity::{fdr_block_bootstrap, AdfOptions, BootstrapOptions, Deterministics};
use nowcast_core::targeting::{target_panel, TargetingGrid};
use serde::Serialize;

use crate::run::Run;

fn load(run: &Run) -> Result<DataBundle> {
    let dir = run.data_dir()?;
    let b = load_bundle(&dir).with_context(|| format!("loading {}", dir.display()))?;
    for (name, why) in &b.dropped {
        log::warn!("dropped {name}: {why}");
    }
    Ok(b)
}

fn weekly(run: &Run) -> Result<bool> {
    match run.str("gt_frequency")?.as_str() {
        "monthly" => Ok(false),
        "weekly" => Ok(true),
        other => bail!("gt_frequency must be monthly or weekly, got '{other}'"),
    }
}

/// Weekly auxiliary data when requested; otherwise the monthly file, or the weekly panel aggregated.
fn nowcast_data(run: &Run, b: &DataBundle) -> Result<NowcastData> {
    if weekly(run)? || b.gt_monthly.is_some() || b.gt_weekly.is_none() {
        return Ok(b.to_nowcast_data(weekly(run)?)?);
    }
    let (Some((_, wk)), Some(cal)) = (&b.gt_weekly, &b.calendar) else { unreachable!("weekly data has a calendar") };
    let mut data = b.to_nowcast_data(false)?;
    data.gt = Some(GtData::Monthly(aggregate_panel(wk, cal, AsOf::month(b.nobs() - 1))?));
    Ok(data)
}

/// The full-sample auxiliary panel on the requested frequency.
fn screening_panel(run: &Run, b: &DataBundle) -> Result<Panel> {
    let snap = Snapshot::full(&nowcast_data(run, b)?)?;
    match (weekly(run)?, snap.gt_weekly, snap.gt) {
        (true, Some(wk), _) => Ok(wk),
        (_, _, Some(p)) => Ok(p),
        _ => bail!("no auxiliary series in the data directory"),
    }
}

fn variant_config(run: &Run) -> Result<VariantConfig> {
    let targeting = if run.get::<bool>("targeting")? {
        let mut grid = TargetingGrid::default();
        let alphas: Vec<f64> = run.list("alphas")?;
        if !alphas.is_empty() {
            grid.alphas = alphas;
        }
        grid.n_lambda = run.get("n_lambda")?;
        Some(grid)
    } else {
        None
    };
    Ok(VariantConfig { r: run.get("r")?, targeting, min_selected: run.get("min_selected")?, ..VariantConfig::default() })
}

fn variants(run: &Run, key: &str) -> Result<Vec<Variant>> {
    let names: Vec<String> = run.list(key)?;
    if names.iter().any(|n| n == "all") {
        return Ok(Variant::ALL.to_vec());
    }
    names.iter().map(|n| Variant::parse(n).map_err(Into::into)).collect()
}

#[derive(Serialize)]
struct McRow {
    regime: &'static str,
    rho: f64,
    msfe_l: f64,
    var_l: f64,
    bias2_l: f64,
    msfe_r: f64,
    var_r: f64,
    bias2_r: f64,
    msfe_r_se: f64,
    msfe_l_se: f64,
    n_used: usize,
    n_failed: usize,
}

#[derive(Serialize)]
struct LrRow {
    regime: &'static str,
    n_used: usize,
    n_failed: usize,
    ks_distance: f64,
    mean: f64,
    clip_rate: f64,
}

pub fn simulate(run: &Run) -> Result<Vec<&'static str>> {
    let regimes: Vec<Regime> = run.list::<String>("regimes")?.iter().map(|s| Regime::parse(s)).collect::<Result<_, _>>()?;
    let opts = McOptions { t: run.get("t")?, n: run.get("n")?, ..McOptions::default() };
    let n_sim: usize = run.get("n_sim")?;
    let seed = run.seed()?;
    if run.get::<bool>("lr_null")? {
        let mut rows = Vec::new();
        for &g in &regimes {
            let r = run_lr_null(g, n_sim, seed, &opts)?;
            println!("{:<22} KS {:.4}  mean {:.3}  failed {}", g.name(), r.ks_distance, r.mean, r.n_failed);
            rows.push(LrRow {
                regime: g.name(),
                n_used: r.statistics.len(),
                n_failed: r.n_failed,
                ks_distance: r.ks_distance,
                mean: r.mean,
                clip_rate: r.clip_rate,
            });
        }
        write_rows(&run.path("lr_null.csv"), &rows)?;
        return Ok(vec!["lr_null.csv"]);
    }
    let rhos: Vec<f64> = run.list("rhos")?;
    let report = run_table2(&regimes, &rhos, n_sim, seed, &opts)?;
    let rows: Vec<McRow> = report
        .cells
        .iter()
        .map(|c| McRow {
            regime: c.regime.name(),
            rho: c.rho,
            msfe_l: c.level.msfe,
            var_l: c.level.var,
            bias2_l: c.level.bias2,
            msfe_r: c.slope.msfe,
            var_r: c.slope.var,
            bias2_r: c.slope.bias2,
            msfe_r_se: c.slope_msfe_se,
            msfe_l_se: c.level_msfe_se,
            n_used: c.n_used,
            n_failed: c.n_failed,
        })
        .collect();
    println!("{:<22} {:>5} {:>9} {:>9}", "regime", "rho", "MSFE(L)", "MSFE(R)");
    for r in &rows {
        println!("{:<22} {:>5} {:>9.3} {:>9.3}", r.regime, r.rho, r.msfe_l, r.msfe_r);
    }
    write_rows(&run.path("mc_table.csv"), &rows)?;
    Ok(vec!["mc_table.csv"])
}

#[derive(Serialize)]
struct UnitRootRow {
    series: String,
    adf_stat: f64,
    lags: usize,
    p_asymptotic: f64,
    p_bootstrap: f64,
    integrated: bool,
}

pub fn screen(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let panel = screening_panel(run, &b)?;
    let det = match run.str("deterministics")?.as_str() {
        "none" => Deterministics::None,
        "const" => Deterministics::Const,
        "const_trend" => Deterministics::ConstTrend,
        other => bail!("deterministics must be none, const or const_trend, got '{other}'"),
    };
    let block: usize = run.get("block_len")?;
    let opts = BootstrapOptions {
        level: run.get("fdr_level")?,
        block_len: (block > 0).then_some(block),
        n_boot: run.get("n_boot")?,
        seed: run.seed()?,
        adf: AdfOptions::new(det),
    };
    let rep = fdr_block_bootstrap(&panel, &opts)?;
    let rows: Vec<UnitRootRow> = (0..rep.names.len())
        .map(|i| UnitRootRow {
            series: rep.names[i].clone(),
            adf_stat: rep.stats[i],
            lags: rep.lags[i],
            p_asymptotic: rep.p_asymptotic[i],
            p_bootstrap: rep.p_values[i],
            integrated: !rep.rejected[i],
        })
        .collect();
    println!("{} of {} series classified I(1) at FDR {}", rep.integrated().len(), rows.len(), rep.level);
    write_rows(&run.path("unitroot.csv"), &rows)?;
    Ok(vec!["unitroot.csv"])
}

#[derive(Serialize)]
struct TargetRow {
    series: String,
    selected: bool,
    beta: f64,
}

#[derive(Serialize)]
struct TargetSummary {
    alpha: f64,
    lambda: f64,
    bic: f64,
    n_selected: usize,
    n_series: usize,
}

pub fn target(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let data = nowcast_data(run, &b)?;
    let snap = Snapshot::full(&data)?;
    let cfg = variant_config(run)?;
    let Some(grid) = cfg.targeting.clone() else { bail!("targeting is switched off in the configuration") };
    let base = estimate_variant(&snap, Variant::Baseline, &cfg, None, None)?;
    let slope = smoothed_slope(&base)?;
    let panel = snap.gt.as_ref().context("no auxiliary series in the data directory")?;
    let res = target_panel(&slope, panel, &grid, &cfg.elastic_net)?;
    let rows: Vec<TargetRow> = (0..panel.nseries())
        .map(|j| TargetRow { series: panel.names()[j].clone(), selected: res.selected.contains(&j), beta: res.beta[j] })
        .collect();
    println!("selected {} of {} series (alpha {}, lambda {:.4e}, BIC {:.3})", res.selected.len(), rows.len(), res.alpha, res.lambda, res.bic);
    write_rows(&run.path("targeting.csv"), &rows)?;
    write_rows(
        &run.path("targeting_summary.csv"),
        &[TargetSummary { alpha: res.alpha, lambda: res.lambda, bic: res.bic, n_selected: res.selected.len(), n_series: rows.len() }],
    )?;
    Ok(vec!["targeting.csv", "targeting_summary.csv"])
}

pub fn factors(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let panel = screening_panel(run, &b)?;
    let (ic1, ic2, ic3) = ic_bai_ng(&panel, run.get("r_max")?)?;
    let r_set: usize = run.get("r")?;
    let r = if r_set == 0 { ic2.max(1) } else { r_set };
    println!("Bai-Ng: IC1 {ic1}, IC2 {ic2}, IC3 {ic3}; using r = {r}");
    let dec = pca_nonstationary(&panel, r)?;
    let mut w = csv::Writer::from_path(run.path("factors.csv"))?;
    let mut header = vec!["series".to_string()];
    header.extend((1..=r).map(|k| format!("loading_{k}")));
    header.push("idio_var".into());
    w.write_record(&header)?;
    for i in 0..dec.n() {
        let mut rec = vec![panel.names()[i].clone()];
        rec.extend((0..r).map(|k| dec.loadings[(i, k)].to_string()));
        rec.push(dec.idio_var[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(run.path("factor_ic.csv"))?;
    w.write_record(["criterion", "r"])?;
    for (c, k) in [("IC1", ic1), ("IC2", ic2), ("IC3", ic3)] {
        w.write_record([c.to_string(), k.to_string()])?;
    }
    w.flush()?;
    Ok(vec!["factors.csv", "factor_ic.csv"])
}

#[derive(Serialize)]
struct ParamRow {
    parameter: String,
    value: f64,
}

#[derive(Serialize)]
struct FitRow {
    model: &'static str,
    loglik: f64,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    n_series: usize,
}

#[derive(Serialize)]
struct AccuracyRow {
    model: &'static str,
    scope: String,
    level: f64,
    slope: f64,
    theta: f64,
}

pub fn estimate(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let data = nowcast_data(run, &b)?;
    let cfg = variant_config(run)?;
    let v = Variant::parse(&run.str("model")?)?;
    let fits = estimate_insample(&data, &[v], &cfg)?;
    let f = &fits[0];
    let est = &f.fit.estimate;
    if !est.converged {
        log::warn!("optimizer did not converge (gradient norm {:.3e})", est.grad_norm);
    }
    for w in f.fit.prepared.warnings.iter().chain(&est.warnings) {
        log::warn!("{w}");
    }
    let rows: Vec<ParamRow> = est.rows().into_iter().map(|(parameter, value)| ParamRow { parameter, value }).collect();
    for r in &rows {
        println!("{:<16} {:>12.5}", r.parameter, r.value);
    }
    println!("loglik {:.4}", est.loglik);
    write_rows(&run.path("params.csv"), &rows)?;
    write_rows(
        &run.path("fit.csv"),
        &[FitRow {
            model: v.name(),
            loglik: est.loglik,
            converged: est.converged,
            iterations: est.iterations,
            grad_norm: est.grad_norm,
            n_series: f.fit.prepared.gt_columns.len(),
        }],
    )?;
    let rel = f.report.relative;
    write_rows(
        &run.path("accuracy.csv"),
        &[AccuracyRow { model: v.name(), scope: "in_sample".into(), level: rel.level, slope: rel.slope, theta: rel.theta }],
    )?;
    Ok(vec!["params.csv", "fit.csv", "accuracy.csv"])
}

#[derive(Serialize)]
struct NowcastRow {
    model: &'static str,
    month: String,
    week: Option<usize>,
    level: f64,
    slope: f64,
    theta: f64,
    var_level: f64,
    var_slope: f64,
    var_theta: f64,
    flagged: bool,
}

pub fn nowcast(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let data = nowcast_data(run, &b)?;
    let t = data.nobs();
    let h: usize = run.get("h")?;
    let start = match run.str("start")?.as_str() {
        "auto" => t.checked_sub(h).context("h exceeds the sample")?,
        s => s.parse().with_context(|| format!("start must be a month index or auto, got '{s}'"))?,
    };
    let step = if run.get::<bool>("weeks")? { Step::Weekly } else { Step::Monthly };
    let opts = NowcastOptions { start, h, step, warm_start: run.get("warm_start")?, config: variant_config(run)? };
    let vs = variants(run, "models")?;
    let res = recursive_nowcast(&data, &vs, &opts)?;
    let mut rows = Vec::new();
    let mut acc = Vec::new();
    for v in &res.variants {
        for w in &v.warnings {
            log::warn!("{w}");
        }
        for p in &v.points {
            let e = p.estimate;
            rows.push(NowcastRow {
                model: v.variant.name(),
                month: b.months[p.as_of.month].format("%Y-%m-%d").to_string(),
                week: p.as_of.week,
                level: e.level,
                slope: e.slope,
                theta: e.theta,
                var_level: e.var_level,
                var_slope: e.var_slope,
                var_theta: e.var_theta,
                flagged: p.flagged,
            });
        }
        let r = v.report.relative;
        acc.push(AccuracyRow { model: v.variant.name(), scope: "all".into(), level: r.level, slope: r.slope, theta: r.theta });
        for (j, m) in v.report.per_week.iter().enumerate() {
            acc.push(AccuracyRow { model: v.variant.name(), scope: format!("week {}", j + 1), level: m.level, slope: m.slope, theta: m.theta });
        }
    }
    println!("{:<10} {:<8} {:>9} {:>9} {:>9}", "model", "scope", "MSE(L)", "MSE(R)", "MSE(θ)");
    for a in &acc {
        println!("{:<10} {:<8} {:>9.3} {:>9.3} {:>9.3}", a.model, a.scope, a.level, a.slope, a.theta);
    }
    write_rows(&run.path("nowcast.csv"), &rows)?;
    write_rows(&run.path("accuracy.csv"), &acc)?;
    Ok(vec!["nowcast.csv", "accuracy.csv"])
}

pub fn diagnose(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let data = nowcast_data(run, &b)?;
    let v = Variant::parse(&run.str("model")?)?;
    let fits = estimate_insample(&data, &[v], &variant_config(run)?)?;
    let fit = &fits[0].fit;
    let mut names: Vec<String> = (1..=5).map(|j| format!("y{j}")).collect();
    if v.uses_cc() {
        names.push("cc".into());
    }
    if let Some(p) = Snapshot::full(&data)?.gt {
        names.extend(fit.prepared.gt_columns.iter().map(|&j| p.names()[j].clone()));
    }
    let rows = residual_normality_report(&fit.output, &names)?;
    let reject = rows.iter().filter(|r| r.sw_p < 0.05).count();
    println!("Shapiro-Wilk rejects normality at 5% for {reject} of {} series", rows.len());
    write_rows(&run.path("normality.csv"), &rows)?;
    Ok(vec!["normality.csv"])
}

#[derive(Serialize)]
struct LrRowOut {
    model: &'static str,
    hypothesis: String,
    statistic: f64,
    df: usize,
    p_value: f64,
    loglik_restricted: f64,
    loglik_unrestricted: f64,
}

fn hypothesis(s: &str) -> Result<Hypothesis> {
    let idx = |p: &str| -> Result<usize> { s[p.len()..].parse().with_context(|| format!("bad factor index in '{s}'")) };
    Ok(match s {
        "rho_cc" => Hypothesis::RhoCc,
        "rho_gt" => Hypothesis::RhoGtAll,
        "rho_all" => Hypothesis::RhoAll,
        _ if s.starts_with("rho_cc_gt") => Hypothesis::RhoCcGt(idx("rho_cc_gt")?),
        _ if s.starts_with("rho_gt") => Hypothesis::RhoGt(idx("rho_gt")?),
        _ => bail!("unknown hypothesis '{s}' (rho_cc, rho_gt, rho_gtK, rho_cc_gtK, rho_all)"),
    })
}

pub fn lrtest(run: &Run) -> Result<Vec<&'static str>> {
    let b = load(run)?;
    let data = nowcast_data(run, &b)?;
    let v = Variant::parse(&run.str("model")?)?;
    let cfg = variant_config(run)?;
    let snap = Snapshot::full(&data)?;
    let slope = if v.uses_gt() && cfg.targeting.is_some() {
        Some(smoothed_slope(&estimate_variant(&snap, Variant::Baseline, &cfg, None, None)?)?)
    } else {
        None
    };
    let prepared = prepare_variant(&snap, v, &cfg, slope.as_deref())?;
    let init = default_init(&prepared.spec, &prepared.data);
    let hyp = hypothesis(&run.str("hypothesis")?)?;
    let t = lr_test(&prepared.model(), &prepared.data, &init, &hyp, &BfgsOptions::default())?;
    println!("{}: LR {:.4} on {} df, p = {:.4}", t.hypothesis, t.statistic, t.df, t.p_value);
    write_rows(
        &run.path("lrtest.csv"),
        &[LrRowOut {
            model: v.name(),
            hypothesis: t.hypothesis,
            statistic: t.statistic,
            df: t.df,
            p_value: t.p_value,
            loglik_restricted: t.loglik_restricted,
            loglik_unrestricted: t.loglik_unrestricted,
        }],
    )?;
    Ok(vec!["lrtest.csv"])
}

pub fn fixture(run: &Run) -> Result<Vec<&'static str>> {
    let opts = FixtureOptions {
        t: run.get("t")?,
        n_gt: run.get("n_gt")?,
        n_noise: run.get("n_noise")?,
        weekly: run.get("weekly")?,
        ..FixtureOptions::default()
    };
    let b = synthetic_bundle(run.seed()?, &opts)?;
    write_bundle(&b, &run.dir)?;
    println!("wrote a {}-month synthetic bundle to {}", b.nobs(), run.dir.display());
    let mut files = vec!["lfs.csv", "cc.csv", "gt_monthly.csv"];
    if opts.weekly {
        files.extend(["gt_weekly.csv", "calendar.csv"]);
    }
    Ok(files)
}
