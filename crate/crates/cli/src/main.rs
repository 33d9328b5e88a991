//! `nowcast`: labour-force nowcasting with auxiliary series.
//!
//! Every setting is a `key = value` pair. Values come from the command's
//! defaults, then `--config FILE`, then command-line flags. Each run writes its
//! outputs, the effective `config.txt` and a `manifest.txt` into the run directory.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use nowcast_core::io::Config;

use run::{defaults, flags, Run};

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Nowcasting unemployment from a rotating panel survey and auxiliary series")]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for the outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory with lfs.csv and optional cc.csv, gt_monthly.csv, gt_weekly.csv, calendar.csv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo comparison of the trend model with and without an auxiliary panel.
    Simulate(SimulateArgs),
    /// ADF unit-root screening of the auxiliary panel with bootstrap FDR control.
    Screen(ScreenArgs),
    /// Elastic-net targeting of auxiliary series on the estimated slope.
    Target(TargetArgs),
    /// Principal components of the differenced auxiliary panel.
    Factors(FactorsArgs),
    /// Maximum-likelihood estimation on the full sample.
    Estimate(EstimateArgs),
    /// Recursive real-time nowcasts and relative accuracy.
    Nowcast(NowcastArgs),
    /// Normality tests on standardized prediction errors.
    Diagnose(EstimateArgs),
    /// Likelihood-ratio test of a correlation restriction.
    Lrtest(LrtestArgs),
    /// Writes a synthetic data bundle.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Comma-separated regimes (homoskedastic-dense, homoskedastic-sparse, heteroskedastic-dense, gaussian, exponential, t4).
    #[arg(long)]
    regime: Option<String>,
    /// Comma-separated correlations.
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    nsim: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Simulate the LR statistic for rho = 0 instead of nowcast accuracy.
    #[arg(long)]
    lr_null: bool,
}

#[derive(Args)]
struct FrequencyArg {
    /// Sampling of the auxiliary panel: monthly or weekly.
    #[arg(long)]
    gt_frequency: Option<String>,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    freq: FrequencyArg,
    #[arg(long)]
    fdr_level: Option<f64>,
    #[arg(long)]
    n_boot: Option<usize>,
    /// Bootstrap block length; 0 chooses ⌈T^(1/3)⌉.
    #[arg(long)]
    block_len: Option<usize>,
    /// none, const or const_trend.
    #[arg(long)]
    deterministics: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    freq: FrequencyArg,
    /// Number of auxiliary factors.
    #[arg(long)]
    r: Option<usize>,
    /// Elastic-net targeting before factor extraction (true or false).
    #[arg(long)]
    targeting: Option<bool>,
    /// Fewest targeted series kept before falling back to the whole panel.
    #[arg(long)]
    min_selected: Option<usize>,
    /// Comma-separated elastic-net mixing values.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    n_lambda: Option<usize>,
}

#[derive(Args)]
struct TargetArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct FactorsArgs {
    #[command(flatten)]
    freq: FrequencyArg,
    /// Number of factors; 0 uses the IC2 choice.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    r_max: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    /// baseline, cc, gt or cc_gt.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    opts: ModelArgs,
}

#[derive(Args)]
struct NowcastArgs {
    /// Comma-separated variants, or all.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    opts: ModelArgs,
    /// Nowcast at every week of the month (weekly auxiliary data).
    #[arg(long)]
    weeks: bool,
    /// First out-of-sample month (zero-based) or auto for T - h.
    #[arg(long)]
    start: Option<String>,
    /// Number of out-of-sample months.
    #[arg(long)]
    h: Option<usize>,
    /// Start each refit from the previous optimum (true or false).
    #[arg(long)]
    warm_start: Option<bool>,
}

#[derive(Args)]
struct LrtestArgs {
    #[arg(long)]
    model: Option<String>,
    /// rho_cc, rho_gt, rho_gtK, rho_cc_gtK or rho_all.
    #[arg(long)]
    hypothesis: Option<String>,
    #[command(flatten)]
    opts: ModelArgs,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    n_gt: Option<usize>,
    #[arg(long)]
    n_noise: Option<usize>,
    /// Also write weekly auxiliary data (true or false).
    #[arg(long)]
    weekly: Option<bool>,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn on(b: bool) -> Option<String> {
    b.then(|| "true".into())
}

const MODEL_DEFAULTS: [(&str, &str); 6] =
    [("gt_frequency", "monthly"), ("r", "2"), ("targeting", "true"), ("min_selected", "5"), ("alphas", ""), ("n_lambda", "50")];

fn model_defaults(extra: &[(&str, &str)]) -> Config {
    let mut c = defaults(&MODEL_DEFAULTS);
    c.merge(&defaults(extra));
    c
}

fn model_flags(m: &ModelArgs) -> Config {
    flags([
        ("gt_frequency", m.freq.gt_frequency.clone()),
        ("r", s(&m.r)),
        ("targeting", s(&m.targeting)),
        ("min_selected", s(&m.min_selected)),
        ("alphas", m.alphas.clone()),
        ("n_lambda", s(&m.n_lambda)),
    ])
}

fn with(mut c: Config, more: Config) -> Config {
    c.merge(&more);
    c
}

fn dispatch(cli: Cli) -> Result<()> {
    let (name, dflt, fl): (&'static str, Config, Config) = match &cli.command {
        Command::Simulate(a) => (
            "simulate",
            defaults(&[
                ("regimes", "homoskedastic-dense"),
                ("rhos", "0, 0.6, 0.9, 0.99"),
                ("n_sim", "200"),
                ("t", "150"),
                ("n", "100"),
                ("lr_null", "false"),
            ]),
            flags([
                ("regimes", a.regime.clone()),
                ("rhos", a.rho.clone()),
                ("n_sim", s(&a.nsim)),
                ("t", s(&a.t)),
                ("n", s(&a.n)),
                ("lr_null", on(a.lr_null)),
            ]),
        ),
        Command::Screen(a) => (
            "screen",
            defaults(&[
                ("gt_frequency", "monthly"),
                ("fdr_level", "0.05"),
                ("n_boot", "999"),
                ("block_len", "0"),
                ("deterministics", "const_trend"),
            ]),
            flags([
                ("gt_frequency", a.freq.gt_frequency.clone()),
                ("fdr_level", s(&a.fdr_level)),
                ("n_boot", s(&a.n_boot)),
                ("block_len", s(&a.block_len)),
                ("deterministics", a.deterministics.clone()),
            ]),
        ),
        Command::Target(a) => ("target", model_defaults(&[]), model_flags(&a.model)),
        Command::Factors(a) => (
            "factors",
            defaults(&[("gt_frequency", "monthly"), ("r", "0"), ("r_max", "8")]),
            flags([("gt_frequency", a.freq.gt_frequency.clone()), ("r", s(&a.r)), ("r_max", s(&a.r_max))]),
        ),
        Command::Estimate(a) => (
            "estimate",
            model_defaults(&[("model", "baseline")]),
            with(model_flags(&a.opts), flags([("model", a.model.clone())])),
        ),
        Command::Diagnose(a) => (
            "diagnose",
            model_defaults(&[("model", "baseline")]),
            with(model_flags(&a.opts), flags([("model", a.model.clone())])),
        ),
        Command::Nowcast(a) => (
            "nowcast",
            model_defaults(&[("models", "all"), ("weeks", "false"), ("start", "auto"), ("h", "12"), ("warm_start", "true")]),
            with(
                model_flags(&a.opts),
                flags([
                    ("models", a.model.clone()),
                    ("weeks", on(a.weeks)),
                    ("start", a.start.clone()),
                    ("h", s(&a.h)),
                    ("warm_start", s(&a.warm_start)),
                ]),
            ),
        ),
        Command::Lrtest(a) => (
            "lrtest",
            model_defaults(&[("model", "cc"), ("hypothesis", "rho_cc")]),
            with(model_flags(&a.opts), flags([("model", a.model.clone()), ("hypothesis", a.hypothesis.clone())])),
        ),
        Command::Fixture(a) => (
            "fixture",
            defaults(&[("t", "185"), ("n_gt", "40"), ("n_noise", "10"), ("weekly", "true")]),
            flags([("t", s(&a.t)), ("n_gt", s(&a.n_gt)), ("n_noise", s(&a.n_noise)), ("weekly", s(&a.weekly))]),
        ),
    };
    let common = flags([
        ("seed", s(&cli.seed)),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("data", cli.data.as_ref().map(|p| p.display().to_string())),
    ]);
    let run = Run::new(name, dflt, cli.config.as_deref(), with(fl, common))?;
    let outputs = match cli.command {
        Command::Simulate(_) => commands::simulate(&run)?,
        Command::Screen(_) => commands::screen(&run)?,
        Command::Target(_) => commands::target(&run)?,
        Command::Factors(_) => commands::factors(&run)?,
        Command::Estimate(_) => commands::estimate(&run)?,
        Command::Nowcast(_) => commands::nowcast(&run)?,
        Command::Diagnose(_) => commands::diagnose(&run)?,
        Command::Lrtest(_) => commands::lrtest(&run)?,
        Command::Fixture(_) => commands::fixture(&run)?,
    };
    run.finish(&outputs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
