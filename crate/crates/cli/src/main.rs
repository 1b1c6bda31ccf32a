//! `residual-flow`: one binary wiring the full pipeline.
//!
//! Subcommands: `simulate | ingest | residuals | calibrate | predict |
//! backtest`. Configuration comes from an optional JSON file (`--config`);
//! any flag overrides its config key. All randomness flows from the single
//! top-level seed. Logging is controlled by `RESIDUAL_FLOW_LOG`
//! (error|warn|info|debug).
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data error,
//! 5 calibration/evaluation failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use residual_flow::backtest::BacktestError;
use residual_flow::calibrate::{CalibrateError, Feature, Method, TargetKind, VolumeSource};
use residual_flow::impliedvol::OptionRight;
use residual_flow::marketdata::MarketDataError;
use residual_flow::residual::ResidualError;
use residual_flow::synth::ConfigError;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Data(String),
    Calibration(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Calibration(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Calibration(m) => write!(f, "calibration error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ResidualError> for CliError {
    fn from(e: ResidualError) -> Self {
        match e {
            ResidualError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        match e {
            CalibrateError::EmptyMatrix | CalibrateError::InvalidMatrix(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Calibration(e.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::InvalidPlan(_) => CliError::Config(e.to_string()),
            BacktestError::Calibrate(inner) => inner.into(),
            _ => CliError::Calibration(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "residual-flow",
    about = "Residual option-flow model: simulate, ingest, calibrate and backtest",
    version
)]
struct Cli {
    /// JSON config file; flags override individual keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated files and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct DataFlags {
    /// Trades stream (CSV or JSON-lines).
    #[arg(long)]
    trades: Option<PathBuf>,
    /// Quotes stream (CSV or JSON-lines).
    #[arg(long)]
    quotes: Option<PathBuf>,
    /// Open-interest snapshots (CSV or JSON-lines).
    #[arg(long)]
    open_interest: Option<PathBuf>,
}

#[derive(Args, Default)]
struct BarFlags {
    /// Bar interval in seconds.
    #[arg(long)]
    interval_secs: Option<f64>,
    /// Option instrument id in the streams.
    #[arg(long)]
    option_id: Option<String>,
    /// Underlying instrument id in the streams.
    #[arg(long)]
    underlying_id: Option<String>,
    /// Contract strike.
    #[arg(long)]
    strike: Option<f64>,
    /// Contract expiry date, YYYY-MM-DD.
    #[arg(long)]
    expiry: Option<String>,
    /// Contract right: call or put.
    #[arg(long)]
    right: Option<String>,
    /// Continuously compounded rate per year.
    #[arg(long)]
    rate: Option<f64>,
    /// Bars an implied vol may be forward-filled.
    #[arg(long)]
    sigma_ffill_limit: Option<usize>,
    /// Quote staleness bound for side classification, seconds.
    #[arg(long)]
    quote_staleness_secs: Option<f64>,
}

#[derive(Args, Default)]
struct ResidualFlags {
    /// Rolling hedging-baseline window, bars.
    #[arg(long)]
    window: Option<usize>,
    /// Floor on the residual standard deviation before z-scoring.
    #[arg(long)]
    min_std_floor: Option<f64>,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// Estimator: ols, ridge or lasso.
    #[arg(long)]
    method: Option<String>,
    /// Fixed penalty (skips grid selection).
    #[arg(long)]
    penalty: Option<f64>,
    /// Comma-separated penalty grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Which volume feeds V_t: option or underlying.
    #[arg(long)]
    volume_source: Option<String>,
    /// Target kind: log_return or price_change.
    #[arg(long)]
    target: Option<String>,
    /// Exclude a feature (v, oi, sigma, delta_r); repeatable.
    #[arg(long = "exclude-feature", action = clap::ArgAction::Append)]
    exclude_feature: Vec<String>,
}

#[derive(Args, Default)]
struct SplitFlags {
    /// Training rows per fold.
    #[arg(long)]
    train_len: Option<usize>,
    /// Test rows per fold.
    #[arg(long)]
    test_len: Option<usize>,
    /// Rows the origin advances between folds.
    #[arg(long)]
    step: Option<usize>,
    /// Inner folds for penalty selection.
    #[arg(long)]
    select_folds: Option<usize>,
}

#[derive(Args, Default)]
struct SynthFlags {
    /// Bars to simulate (minimum 200).
    #[arg(long)]
    n_bars: Option<usize>,
    /// Simulated bar interval in seconds.
    #[arg(long)]
    bar_interval_secs: Option<f64>,
    /// Base underlying volatility per √year.
    #[arg(long)]
    underlying_vol: Option<f64>,
    /// λ*: planted return signal per unit informed z.
    #[arg(long)]
    informed_strength: Option<f64>,
    /// Informed contracts per unit z.
    #[arg(long)]
    informed_volume_scale: Option<f64>,
    /// Unexplained volume noise, contracts.
    #[arg(long)]
    noise_vol: Option<f64>,
    /// Option log-return per unit planted signal.
    #[arg(long)]
    return_scale: Option<f64>,
    /// Initial underlying price.
    #[arg(long)]
    spot: Option<f64>,
    /// First bar date, YYYY-MM-DD.
    #[arg(long)]
    start_date: Option<String>,
    /// Days from start to contract expiry.
    #[arg(long)]
    expiry_days: Option<i64>,
    /// Initial open interest.
    #[arg(long)]
    oi_initial: Option<u64>,
    /// Daily open-interest jitter, contracts.
    #[arg(long)]
    oi_daily_jitter: Option<f64>,
    /// Hedging flow intercept, contracts.
    #[arg(long)]
    hedge_intercept: Option<f64>,
    /// Hedging contracts per unit |underlying return|.
    #[arg(long)]
    hedge_abs_return: Option<f64>,
    /// Hedging contracts per unit |ΔOI|.
    #[arg(long)]
    hedge_abs_oi: Option<f64>,
    /// Hedging response to lagged signed volume.
    #[arg(long)]
    hedge_lag_signed: Option<f64>,
    /// Typical underlying trade size per bar.
    #[arg(long)]
    underlying_volume_base: Option<f64>,
    /// Mean reversion of log σ per bar.
    #[arg(long)]
    vol_reversion: Option<f64>,
    /// Innovation std of log σ per bar.
    #[arg(long)]
    vol_step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market dataset plus its ground truth.
    Simulate {
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Parse raw streams and aggregate them into bars.csv.
    Ingest {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        bars: BarFlags,
    },
    /// Compute the residual transaction series ΔR_t.
    Residuals {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        bars: BarFlags,
        #[command(flatten)]
        residual: ResidualFlags,
    },
    /// Fit the model and write model.json.
    Calibrate {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        bars: BarFlags,
        #[command(flatten)]
        residual: ResidualFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Apply a saved model to data and write predictions.csv.
    Predict {
        /// Path to a model.json produced by `calibrate`.
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        bars: BarFlags,
        #[command(flatten)]
        residual: ResidualFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Walk-forward evaluation; writes report.json and report.csv.
    Backtest {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        bars: BarFlags,
        #[command(flatten)]
        residual: ResidualFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        split: SplitFlags,
    },
}

fn parse_flag<T: std::str::FromStr<Err = String>>(
    value: &Option<String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    value
        .as_ref()
        .map(|raw| raw.parse().map_err(|e| CliError::Config(format!("--{key}: {e}"))))
        .transpose()
}

fn parse_right(value: &Option<String>) -> Result<Option<OptionRight>, CliError> {
    value
        .as_ref()
        .map(|raw| match raw.as_str() {
            "call" => Ok(OptionRight::Call),
            "put" => Ok(OptionRight::Put),
            other => Err(CliError::Config(format!(
                "--right: expected call or put, got {other:?}"
            ))),
        })
        .transpose()
}

fn apply_data(cfg: &mut RunConfig, flags: &DataFlags) {
    if let Some(p) = &flags.trades {
        cfg.data.trades = Some(p.clone());
    }
    if let Some(p) = &flags.quotes {
        cfg.data.quotes = Some(p.clone());
    }
    if let Some(p) = &flags.open_interest {
        cfg.data.open_interest = Some(p.clone());
    }
}

fn apply_bars(cfg: &mut RunConfig, flags: &BarFlags) -> Result<(), CliError> {
    if let Some(v) = flags.interval_secs {
        cfg.bars.interval_secs = v;
    }
    if let Some(v) = &flags.option_id {
        cfg.bars.option_id = v.clone();
    }
    if let Some(v) = &flags.underlying_id {
        cfg.bars.underlying_id = v.clone();
    }
    if let Some(v) = flags.strike {
        cfg.bars.strike = v;
    }
    if let Some(v) = &flags.expiry {
        cfg.bars.expiry = v.clone();
    }
    if let Some(v) = parse_right(&flags.right)? {
        cfg.bars.right = v;
    }
    if let Some(v) = flags.rate {
        cfg.bars.rate = v;
    }
    if let Some(v) = flags.sigma_ffill_limit {
        cfg.bars.sigma_ffill_limit = v;
    }
    if let Some(v) = flags.quote_staleness_secs {
        cfg.bars.quote_staleness_secs = v;
    }
    Ok(())
}

fn apply_residual(cfg: &mut RunConfig, flags: &ResidualFlags) {
    if let Some(v) = flags.window {
        cfg.residual.window = v;
    }
    if let Some(v) = flags.min_std_floor {
        cfg.residual.min_std_floor = v;
    }
}

fn apply_model(cfg: &mut RunConfig, flags: &ModelFlags) -> Result<(), CliError> {
    if let Some(v) = parse_flag::<Method>(&flags.method, "method")? {
        cfg.model.method = v;
    }
    if let Some(v) = flags.penalty {
        cfg.model.penalty = Some(v);
    }
    if let Some(v) = &flags.grid {
        cfg.model.grid = Some(v.clone());
    }
    if let Some(v) = parse_flag::<VolumeSource>(&flags.volume_source, "volume-source")? {
        cfg.model.volume_source = v;
    }
    if let Some(v) = parse_flag::<TargetKind>(&flags.target, "target")? {
        cfg.model.target = v;
    }
    for raw in &flags.exclude_feature {
        let feature: Feature = raw
            .parse()
            .map_err(|e| CliError::Config(format!("--exclude-feature: {e}")))?;
        if !cfg.model.exclude.contains(&feature) {
            cfg.model.exclude.push(feature);
        }
    }
    Ok(())
}

fn apply_split(cfg: &mut RunConfig, flags: &SplitFlags) {
    if let Some(v) = flags.train_len {
        cfg.split.train_len = v;
    }
    if let Some(v) = flags.test_len {
        cfg.split.test_len = v;
    }
    if let Some(v) = flags.step {
        cfg.split.step = v;
    }
    if let Some(v) = flags.select_folds {
        cfg.split.select_folds = v;
    }
}

fn apply_synth(cfg: &mut RunConfig, flags: &SynthFlags) {
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = flags.$field.clone() {
                cfg.synth.$field = v;
            }
        };
    }
    set!(n_bars);
    set!(bar_interval_secs);
    set!(underlying_vol);
    set!(informed_strength);
    set!(informed_volume_scale);
    set!(noise_vol);
    set!(return_scale);
    set!(spot);
    set!(start_date);
    set!(expiry_days);
    set!(oi_initial);
    set!(oi_daily_jitter);
    set!(hedge_intercept);
    set!(hedge_abs_return);
    set!(hedge_abs_oi);
    set!(hedge_lag_signed);
    set!(underlying_volume_base);
    set!(vol_reversion);
    set!(vol_step);
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }

    match &cli.command {
        Command::Simulate { synth } => {
            apply_synth(&mut cfg, synth);
            commands::simulate(&cfg)
        }
        Command::Ingest { data, bars } => {
            apply_data(&mut cfg, data);
            apply_bars(&mut cfg, bars)?;
            commands::ingest(&cfg)
        }
        Command::Residuals {
            data,
            bars,
            residual,
        } => {
            apply_data(&mut cfg, data);
            apply_bars(&mut cfg, bars)?;
            apply_residual(&mut cfg, residual);
            commands::residuals(&cfg)
        }
        Command::Calibrate {
            data,
            bars,
            residual,
            model,
        } => {
            apply_data(&mut cfg, data);
            apply_bars(&mut cfg, bars)?;
            apply_residual(&mut cfg, residual);
            apply_model(&mut cfg, model)?;
            commands::calibrate(&cfg)
        }
        Command::Predict {
            model_file,
            data,
            bars,
            residual,
            model,
        } => {
            apply_data(&mut cfg, data);
            apply_bars(&mut cfg, bars)?;
            apply_residual(&mut cfg, residual);
            apply_model(&mut cfg, model)?;
            let path = model_file
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("model.json"));
            commands::predict(&cfg, &path)
        }
        Command::Backtest {
            data,
            bars,
            residual,
            model,
            split,
        } => {
            apply_data(&mut cfg, data);
            apply_bars(&mut cfg, bars)?;
            apply_residual(&mut cfg, residual);
            apply_model(&mut cfg, model)?;
            apply_split(&mut cfg, split);
            commands::backtest(&cfg)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RESIDUAL_FLOW_LOG", "warn"))
        .init();

    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
