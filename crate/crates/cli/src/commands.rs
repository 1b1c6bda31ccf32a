//! Subcommand implementations. Every command is deterministic given its
//! config and inputs, writes machine-readable files under the output
//! directory, and prints one human summary line to stdout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use residual_flow::backtest::{run_backtest, BacktestConfig, PenaltyChoice, SplitPlan};
use residual_flow::calibrate::{
    self, CalibratedModel, FeatureMatrix, Method, PenaltySelection,
};
use residual_flow::marketdata::{
    self, parse, AggregationConfig, BlackScholesIv, MarketBar, OpenInterestSnapshot, QuoteTick,
    TradeTick,
};
use residual_flow::residual::{self, ResidualPoint};
use residual_flow::synth;
use residual_flow::time::NANOS_PER_SEC;

use crate::config::RunConfig;
use crate::CliError;

fn create_output(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("creating {}: {e}", parent.display())))?;
        }
    }
    let file = File::create(path)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(BufReader::new(file))
}

fn file_digest(hasher: &mut Sha256, path: &Path) -> Result<(), CliError> {
    let mut file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    hasher.update(&buf);
    Ok(())
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let synth_cfg = cfg.synth_config()?;
    let data = synth::generate(&synth_cfg)?;

    let trades_path = cfg.out_dir.join("trades.csv");
    let quotes_path = cfg.out_dir.join("quotes.csv");
    let oi_path = cfg.out_dir.join("open_interest.csv");
    let truth_path = cfg.out_dir.join("ground_truth.csv");

    let mut w = create_output(&trades_path)?;
    parse::write_trades_csv(&mut w, &data.trades).map_err(io_err(&trades_path))?;
    w.flush().map_err(io_err(&trades_path))?;
    let mut w = create_output(&quotes_path)?;
    parse::write_quotes_csv(&mut w, &data.quotes).map_err(io_err(&quotes_path))?;
    w.flush().map_err(io_err(&quotes_path))?;
    let mut w = create_output(&oi_path)?;
    parse::write_open_interest_csv(&mut w, &data.open_interest).map_err(io_err(&oi_path))?;
    w.flush().map_err(io_err(&oi_path))?;
    let mut w = create_output(&truth_path)?;
    synth::write_ground_truth_csv(&mut w, &data.ground_truth).map_err(io_err(&truth_path))?;
    w.flush().map_err(io_err(&truth_path))?;

    let mut hasher = Sha256::new();
    for path in [&trades_path, &quotes_path, &oi_path, &truth_path] {
        file_digest(&mut hasher, path)?;
    }
    println!(
        "bars={} trades={} quotes={} oi_snapshots={} digest={}",
        synth_cfg.n_bars,
        data.trades.len(),
        data.quotes.len(),
        data.open_interest.len(),
        hex(&hasher.finalize())
    );
    Ok(())
}

type Streams = (Vec<TradeTick>, Vec<QuoteTick>, Vec<OpenInterestSnapshot>);

fn load_streams(cfg: &RunConfig) -> Result<(Streams, usize), CliError> {
    let trades_path = cfg.trades_path();
    let quotes_path = cfg.quotes_path();
    let oi_path = cfg.open_interest_path();

    let trades = parse::parse_trades(open_input(&trades_path)?)?;
    let quotes = parse::parse_quotes(open_input(&quotes_path)?)?;
    let oi = parse::parse_open_interest(open_input(&oi_path)?)?;

    let mut issue_count = 0;
    for (path, issues) in [
        (&trades_path, &trades.issues),
        (&quotes_path, &quotes.issues),
        (&oi_path, &oi.issues),
    ] {
        issue_count += issues.len();
        for issue in issues {
            log::warn!("{}: {issue}", path.display());
        }
    }
    Ok(((trades.records, quotes.records, oi.records), issue_count))
}

fn build_bars(cfg: &RunConfig, streams: &Streams) -> Result<Vec<MarketBar>, CliError> {
    let contract = cfg.contract()?;
    let agg = AggregationConfig {
        option_id: cfg.bars.option_id.clone(),
        underlying_id: cfg.bars.underlying_id.clone(),
        interval_ns: (cfg.bars.interval_secs * NANOS_PER_SEC as f64) as i64,
        quote_staleness_ns: (cfg.bars.quote_staleness_secs * NANOS_PER_SEC as f64) as i64,
        sigma_ffill_limit: cfg.bars.sigma_ffill_limit,
    };
    let iv = BlackScholesIv {
        contract,
        rate: cfg.bars.rate,
    };
    Ok(marketdata::aggregate_bars(
        &streams.0, &streams.1, &streams.2, &iv, &agg,
    )?)
}

fn build_residuals(cfg: &RunConfig, bars: &[MarketBar]) -> Result<Vec<ResidualPoint>, CliError> {
    let rcfg = cfg.residual_config();
    rcfg.validate()?;
    Ok(residual::compute_residuals(bars, &rcfg)?)
}

fn build_matrix(
    cfg: &RunConfig,
    bars: &[MarketBar],
    points: &[ResidualPoint],
) -> Result<FeatureMatrix, CliError> {
    Ok(calibrate::build_features(
        bars,
        points,
        cfg.model.volume_source,
        cfg.model.target,
    )?)
}

const BARS_HEADER: &str = "bar_start_ns,interval_ns,option_volume,signed_option_volume,buy_volume,sell_volume,unclassified_volume,buy_trades,sell_trades,unclassified_trades,open_interest,implied_vol,option_mid,underlying_mid,underlying_log_return,underlying_volume";

fn write_bars_csv(mut w: impl Write, bars: &[MarketBar]) -> std::io::Result<()> {
    writeln!(w, "{BARS_HEADER}")?;
    for b in bars {
        let sigma = b.implied_vol.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            b.bar_start_ns,
            b.interval_ns,
            b.option_volume,
            b.signed_option_volume,
            b.buy_volume,
            b.sell_volume,
            b.unclassified_volume,
            b.buy_trades,
            b.sell_trades,
            b.unclassified_trades,
            b.open_interest,
            sigma,
            b.option_mid,
            b.underlying_mid,
            b.underlying_log_return,
            b.underlying_volume
        )?;
    }
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let (streams, issues) = load_streams(cfg)?;
    let bars = build_bars(cfg, &streams)?;
    let path = cfg.out_dir.join("bars.csv");
    let mut w = create_output(&path)?;
    write_bars_csv(&mut w, &bars).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    let volume: u64 = bars.iter().map(|b| b.option_volume).sum();
    println!("bars={} option_volume={volume} issues={issues}", bars.len());
    Ok(())
}

pub fn residuals(cfg: &RunConfig) -> Result<(), CliError> {
    let (streams, _) = load_streams(cfg)?;
    let bars = build_bars(cfg, &streams)?;
    let points = build_residuals(cfg, &bars)?;
    let path = cfg.out_dir.join("residuals.csv");
    let mut w = create_output(&path)?;
    residual::write_residuals_csv(&mut w, &points).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    let max_abs = points.iter().map(|p| p.delta_r.abs()).fold(0.0, f64::max);
    println!(
        "points={} window={} max_abs_delta_r={max_abs:.4}",
        points.len(),
        cfg.residual.window
    );
    Ok(())
}

/// Penalty resolution shared by calibrate and predict: a fixed penalty wins,
/// otherwise penalized methods search the configured (or default) grid.
fn resolve_penalty(
    cfg: &RunConfig,
    x: &FeatureMatrix,
) -> Result<(f64, Option<PenaltySelection>), CliError> {
    if cfg.model.method == Method::Ols {
        return Ok((0.0, None));
    }
    if let Some(p) = cfg.model.penalty {
        return Ok((p, None));
    }
    let grid = cfg
        .model
        .grid
        .clone()
        .unwrap_or_else(calibrate::default_penalty_grid);
    let selection = calibrate::select_penalty_excluding(
        x,
        0..x.len(),
        cfg.model.method,
        &grid,
        cfg.split.select_folds,
        &cfg.model.exclude,
    )?;
    Ok((selection.penalty, Some(selection)))
}

pub fn calibrate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (streams, _) = load_streams(cfg)?;
    let bars = build_bars(cfg, &streams)?;
    let points = build_residuals(cfg, &bars)?;
    let x = build_matrix(cfg, &bars, &points)?;
    let (penalty, _) = resolve_penalty(cfg, &x)?;
    let model = calibrate::fit_with_method(
        &x,
        0..x.len(),
        cfg.model.method,
        penalty,
        &cfg.model.exclude,
    )?;
    let path = cfg.out_dir.join("model.json");
    let mut w = create_output(&path)?;
    model.write_json(&mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    println!(
        "method={} penalty={} alpha={:.6} beta={:.6} gamma={:.6} lambda={:.6} epsilon_scale={:.6e}",
        model.method, model.penalty, model.alpha, model.beta, model.gamma, model.lambda,
        model.epsilon_scale
    );
    Ok(())
}

pub use calibrate_cmd as calibrate;

pub fn predict(cfg: &RunConfig, model_path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", model_path.display())))?;
    let model = CalibratedModel::from_json(&text)
        .map_err(|e| CliError::Data(format!("bad model {}: {e}", model_path.display())))?;

    let (streams, _) = load_streams(cfg)?;
    let bars = build_bars(cfg, &streams)?;
    let points = build_residuals(cfg, &bars)?;
    let x = build_matrix(cfg, &bars, &points)?;

    let path = cfg.out_dir.join("predictions.csv");
    let mut w = create_output(&path)?;
    writeln!(w, "bar_start_ns,prediction,target").map_err(io_err(&path))?;
    let mut se = 0.0;
    for row in x.rows() {
        let p = calibrate::predict(&model, &row.vector());
        se += (p - row.target) * (p - row.target);
        writeln!(w, "{},{},{}", row.bar_start_ns, p, row.target).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    println!(
        "rows={} method={} mse={:.6e}",
        x.len(),
        model.method,
        se / x.len() as f64
    );
    Ok(())
}

pub fn backtest(cfg: &RunConfig) -> Result<(), CliError> {
    let (streams, _) = load_streams(cfg)?;
    let bars = build_bars(cfg, &streams)?;
    let points = build_residuals(cfg, &bars)?;
    let x = build_matrix(cfg, &bars, &points)?;

    let penalty = match (cfg.model.method, cfg.model.penalty) {
        (Method::Ols, _) => PenaltyChoice::Fixed(0.0),
        (_, Some(p)) => PenaltyChoice::Fixed(p),
        (_, None) => PenaltyChoice::Grid(
            cfg.model
                .grid
                .clone()
                .unwrap_or_else(calibrate::default_penalty_grid),
        ),
    };
    let config = BacktestConfig {
        method: cfg.model.method,
        penalty,
        excluded: cfg.model.exclude.clone(),
        plan: SplitPlan {
            train_len: cfg.split.train_len,
            test_len: cfg.split.test_len,
            step: cfg.split.step,
        },
        select_folds: cfg.split.select_folds,
        seed: cfg.seed,
    };
    let report = run_backtest(&x, &config)?;

    let json_path = cfg.out_dir.join("report.json");
    let mut w = create_output(&json_path)?;
    report.write_json(&mut w).map_err(io_err(&json_path))?;
    w.flush().map_err(io_err(&json_path))?;
    let csv_path = cfg.out_dir.join("report.csv");
    let mut w = create_output(&csv_path)?;
    report.write_csv(&mut w).map_err(io_err(&csv_path))?;
    w.flush().map_err(io_err(&csv_path))?;

    println!("{}", report.summary_line());
    Ok(())
}
