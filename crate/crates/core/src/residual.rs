//! Residual transaction series ΔR_t.
//!
//! Hedging desks trade option flow in response to observable drivers: how far
//! the underlying moved, how much open interest turned over, and how much
//! signed flow was already in motion. A rolling OLS of signed option volume
//! on those drivers forms the expected-hedging baseline; what is left per bar
//! — standardized by the in-window residual spread — is ΔR_t, the signal the
//! calibration stage consumes.
//!
//! The fit window for bar `t` ends at bar `t − 1`, so ΔR_t never sees bar `t`
//! or anything after it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::marketdata::MarketBar;

/// Fixed regressor set of the hedging baseline (plus an intercept).
pub const REGRESSOR_NAMES: [&str; 3] = [
    "abs_underlying_log_return",
    "abs_oi_change",
    "lagged_signed_volume",
];

const MIN_WINDOW: usize = 20;

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error("window of {got} bars is insufficient, need {need}")]
    InsufficientWindow { got: usize, need: usize },
    #[error("series of {len} bars is too short for window {window}, need at least {} bars", window + 1)]
    SeriesTooShort { len: usize, window: usize },
    #[error("invalid residual config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualConfig {
    /// Rolling fit window W in bars; at least 20.
    pub window: usize,
    /// Floor applied to the in-window residual standard deviation before
    /// z-scoring, so degenerate windows cannot emit ±∞.
    pub min_std_floor: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            window: 60,
            min_std_floor: 1e-9,
        }
    }
}

impl ResidualConfig {
    pub fn validate(&self) -> Result<(), ResidualError> {
        if self.window < MIN_WINDOW {
            return Err(ResidualError::Config(format!(
                "window {} below minimum {MIN_WINDOW}",
                self.window
            )));
        }
        if self.min_std_floor.is_nan() || self.min_std_floor <= 0.0 {
            return Err(ResidualError::Config(format!(
                "min_std_floor {} must be > 0",
                self.min_std_floor
            )));
        }
        Ok(())
    }
}

/// ΔR_t with its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub bar_start_ns: i64,
    /// Baseline prediction Ĥ_t of signed option volume.
    pub expected_hedging_volume: f64,
    /// signed_option_volume_t − Ĥ_t, in contracts.
    pub raw_residual: f64,
    /// raw_residual / max(in-window residual std, min_std_floor).
    pub delta_r: f64,
}

/// Hedging-baseline regression result over one window.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    /// Slopes in [`REGRESSOR_NAMES`] order.
    pub slopes: [f64; 3],
    pub intercept: f64,
    /// Regressor indices dropped for having no variation (or judged
    /// dependent); their slopes are reported as zero.
    pub dropped: Vec<usize>,
    /// Population standard deviation of the in-window fit residuals.
    pub residual_std: f64,
    /// Mean of the in-window fit residuals (≈ 0 for OLS with intercept).
    pub residual_mean: f64,
}

impl BaselineFit {
    /// Applies the baseline to one bar's regressors.
    pub fn predict(&self, regressors: &[f64; 3]) -> f64 {
        self.intercept
            + self.slopes[0] * regressors[0]
            + self.slopes[1] * regressors[1]
            + self.slopes[2] * regressors[2]
    }
}

/// Per-bar regressor values for the full series.
///
/// Bar 0 has no predecessor: its ΔOI and lagged signed volume are zero by
/// convention (its log return is already zero from aggregation).
pub fn regressor_rows(bars: &[MarketBar]) -> Vec<[f64; 3]> {
    bars.iter()
        .enumerate()
        .map(|(i, bar)| {
            if i == 0 {
                [bar.underlying_log_return.abs(), 0.0, 0.0]
            } else {
                let prev = &bars[i - 1];
                [
                    bar.underlying_log_return.abs(),
                    (bar.open_interest as f64 - prev.open_interest as f64).abs(),
                    prev.signed_option_volume as f64,
                ]
            }
        })
        .collect()
}

/// OLS of signed option volume on the hedging drivers over one window.
///
/// `context` is the bar immediately preceding the window, used for the first
/// window bar's lagged regressors; `None` applies the series-start
/// convention. Regressors constant over the window have no information and
/// are dropped with a warning, their slope reported as zero.
pub fn fit_hedging_baseline(
    window: &[MarketBar],
    context: Option<&MarketBar>,
    config: &ResidualConfig,
) -> Result<BaselineFit, ResidualError> {
    config.validate()?;
    if window.len() < config.window {
        return Err(ResidualError::InsufficientWindow {
            got: window.len(),
            need: config.window,
        });
    }
    let rows: Vec<[f64; 3]> = window
        .iter()
        .enumerate()
        .map(|(i, bar)| {
            let prev = if i == 0 { context } else { Some(&window[i - 1]) };
            regressors_for(bar, prev)
        })
        .collect();
    let targets: Vec<f64> = window
        .iter()
        .map(|b| b.signed_option_volume as f64)
        .collect();
    let fit = fit_baseline_rows(&rows, &targets);
    for &j in &fit.dropped {
        log::warn!(
            "degenerate design: regressor `{}` has no variation over the window, slope forced to 0",
            REGRESSOR_NAMES[j]
        );
    }
    Ok(fit)
}

fn regressors_for(bar: &MarketBar, prev: Option<&MarketBar>) -> [f64; 3] {
    match prev {
        Some(p) => [
            bar.underlying_log_return.abs(),
            (bar.open_interest as f64 - p.open_interest as f64).abs(),
            p.signed_option_volume as f64,
        ],
        None => [bar.underlying_log_return.abs(), 0.0, 0.0],
    }
}

fn fit_baseline_rows(rows: &[[f64; 3]], targets: &[f64]) -> BaselineFit {
    let n = rows.len();
    debug_assert!(n > 0 && n == targets.len());

    // A regressor with no variation carries nothing the intercept does not.
    let mut active: Vec<usize> = Vec::with_capacity(3);
    let mut dropped: Vec<usize> = Vec::new();
    for j in 0..3 {
        let first = rows[0][j];
        if rows.iter().any(|r| r[j] != first) {
            active.push(j);
        } else {
            dropped.push(j);
        }
    }

    let mut columns: Vec<Vec<f64>> = active
        .iter()
        .map(|&j| rows.iter().map(|r| r[j]).collect())
        .collect();
    columns.push(vec![1.0; n]);

    let fit = linalg::lstsq(&columns, targets);
    let mut slopes = [0.0f64; 3];
    for (pos, &j) in active.iter().enumerate() {
        if fit.dropped.contains(&pos) {
            dropped.push(j);
        } else {
            slopes[j] = fit.coefficients[pos];
        }
    }
    dropped.sort_unstable();
    let intercept = fit.coefficients[active.len()];

    let baseline = BaselineFit {
        slopes,
        intercept,
        dropped,
        residual_std: 0.0,
        residual_mean: 0.0,
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (row, &target) in rows.iter().zip(targets) {
        let r = target - baseline.predict(row);
        sum += r;
        sum_sq += r * r;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    BaselineFit {
        residual_std: var.sqrt(),
        residual_mean: mean,
        ..baseline
    }
}

/// Rolling out-of-sample residual series over a full bar series.
///
/// For each bar `t ≥ W` the baseline is fit on bars `[t−W, t−1]` and applied
/// to bar `t`; the first `W` bars emit no point.
pub fn compute_residuals(
    bars: &[MarketBar],
    config: &ResidualConfig,
) -> Result<Vec<ResidualPoint>, ResidualError> {
    config.validate()?;
    let w = config.window;
    if bars.len() <= w {
        return Err(ResidualError::SeriesTooShort {
            len: bars.len(),
            window: w,
        });
    }

    let rows = regressor_rows(bars);
    let targets: Vec<f64> = bars.iter().map(|b| b.signed_option_volume as f64).collect();

    let mut drop_counts = [0usize; 3];
    let mut points = Vec::with_capacity(bars.len() - w);
    for t in w..bars.len() {
        let fit = fit_baseline_rows(&rows[t - w..t], &targets[t - w..t]);
        for &j in &fit.dropped {
            drop_counts[j] += 1;
        }
        let expected = fit.predict(&rows[t]);
        let raw = targets[t] - expected;
        let delta_r = raw / fit.residual_std.max(config.min_std_floor);
        points.push(ResidualPoint {
            bar_start_ns: bars[t].bar_start_ns,
            expected_hedging_volume: expected,
            raw_residual: raw,
            delta_r,
        });
    }
    for (j, count) in drop_counts.iter().enumerate() {
        if *count > 0 {
            log::warn!(
                "degenerate design: regressor `{}` had no variation in {count} of {} windows, slope forced to 0 there",
                REGRESSOR_NAMES[j],
                points.len()
            );
        }
    }
    Ok(points)
}

pub const RESIDUALS_HEADER: &str = "bar_start_ns,expected_hedging_volume,raw_residual,delta_r";

pub fn write_residuals_csv(mut w: impl Write, points: &[ResidualPoint]) -> std::io::Result<()> {
    writeln!(w, "{RESIDUALS_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{}",
            p.bar_start_ns, p.expected_hedging_volume, p.raw_residual, p.delta_r
        )?;
    }
    Ok(())
}
