//! Residual option-flow modeling.
//!
//! End-to-end pipeline for a residual-transaction predictive model: ingest
//! option and underlying market data, aggregate it into time bars, extract
//! the residual transaction series ΔR_t (signed option flow left after an
//! expected-hedging baseline), calibrate a linear next-bar-return model by
//! OLS / Ridge / Lasso, and evaluate it with a no-lookahead walk-forward
//! backtester. A seeded synthetic market generator supplies ground truth for
//! every stage.
//!
//! Module map:
//! - [`marketdata`] — event types, parsing/replay, REST adapter, bar builder
//! - [`impliedvol`] — Black–Scholes pricing, delta and vol inversion
//! - [`residual`] — hedging baseline and ΔR series
//! - [`calibrate`] — feature matrix, solvers, penalty selection, prediction
//! - [`backtest`] — walk-forward folds, metrics, report
//! - [`synth`] — seeded generator and independent residual oracle

pub mod backtest;
pub mod calibrate;
pub mod impliedvol;
pub mod linalg;
pub mod marketdata;
pub mod residual;
pub mod rng;
pub mod synth;
pub mod time;

pub use backtest::{
    plan_splits, run_backtest, score, spearman, BacktestConfig, BacktestError, BacktestReport,
    Metrics, PenaltyChoice, SplitPlan,
};
pub use calibrate::{
    build_features, default_penalty_grid, fit_lasso, fit_ols, fit_ridge, predict, select_penalty,
    CalibrateError, CalibratedModel, Feature, FeatureMatrix, FeatureRow, FeatureVector, Method,
    Scaler, TargetKind, VolumeSource,
};
pub use impliedvol::{
    bs_delta, bs_price, bs_vega, implied_vol, norm_cdf, ImpliedVolRequest, OptionRight,
    PricingError, PricingInputs,
};
pub use marketdata::{
    aggregate_bars, classify_side, AggregationConfig, BlackScholesIv, IvProvider, MarketBar,
    MarketDataError, OpenInterestSnapshot, OptionContract, QuoteTick, Side, TradeTick,
};
pub use residual::{
    compute_residuals, fit_hedging_baseline, ResidualConfig, ResidualError, ResidualPoint,
};
pub use synth::{generate, oracle_residuals, GroundTruthRow, SynthConfig, SynthDataset};
