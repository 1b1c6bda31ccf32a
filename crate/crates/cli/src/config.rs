//! Run configuration: JSON file with flat per-module sections, overridable
//! key-by-key from command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use residual_flow::calibrate::{Feature, Method, TargetKind, VolumeSource};
use residual_flow::impliedvol::OptionRight;
use residual_flow::marketdata::OptionContract;
use residual_flow::residual::ResidualConfig;
use residual_flow::synth::{HedgeCoefficients, OiPathParams, SynthConfig};
use residual_flow::time;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub bars: BarsSection,
    pub residual: ResidualSection,
    pub model: ModelSection,
    pub split: SplitSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataSection::default(),
            bars: BarsSection::default(),
            residual: ResidualSection::default(),
            model: ModelSection::default(),
            split: SplitSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Input stream paths; unset paths default to files under `out_dir`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub trades: Option<PathBuf>,
    pub quotes: Option<PathBuf>,
    pub open_interest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarsSection {
    pub interval_secs: f64,
    pub option_id: String,
    pub underlying_id: String,
    pub strike: f64,
    /// Expiry date, `YYYY-MM-DD`.
    pub expiry: String,
    pub right: OptionRight,
    pub rate: f64,
    pub sigma_ffill_limit: usize,
    pub quote_staleness_secs: f64,
}

impl Default for BarsSection {
    fn default() -> Self {
        Self {
            interval_secs: 60.0,
            option_id: "OPT".into(),
            underlying_id: "UND".into(),
            strike: 100.0,
            expiry: "2026-04-05".into(),
            right: OptionRight::Call,
            rate: 0.0,
            sigma_ffill_limit: 5,
            quote_staleness_secs: 60.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualSection {
    pub window: usize,
    pub min_std_floor: f64,
}

impl Default for ResidualSection {
    fn default() -> Self {
        let base = ResidualConfig::default();
        Self {
            window: base.window,
            min_std_floor: base.min_std_floor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub method: Method,
    /// Fixed penalty; when absent, penalized methods search `grid`.
    pub penalty: Option<f64>,
    /// Penalty grid; when absent, the default grid is used.
    pub grid: Option<Vec<f64>>,
    pub volume_source: VolumeSource,
    pub target: TargetKind,
    pub exclude: Vec<Feature>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            method: Method::Ols,
            penalty: None,
            grid: None,
            volume_source: VolumeSource::Option,
            target: TargetKind::LogReturn,
            exclude: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_len: usize,
    pub test_len: usize,
    pub step: usize,
    pub select_folds: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_len: 500,
            test_len: 50,
            step: 50,
            select_folds: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_bars: usize,
    pub bar_interval_secs: f64,
    pub underlying_vol: f64,
    pub informed_strength: f64,
    pub informed_volume_scale: f64,
    pub noise_vol: f64,
    pub return_scale: f64,
    pub spot: f64,
    pub start_date: String,
    pub expiry_days: i64,
    pub oi_initial: u64,
    pub oi_daily_jitter: f64,
    pub hedge_intercept: f64,
    pub hedge_abs_return: f64,
    pub hedge_abs_oi: f64,
    pub hedge_lag_signed: f64,
    pub underlying_volume_base: f64,
    pub vol_reversion: f64,
    pub vol_step: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let base = SynthConfig::default();
        Self {
            n_bars: base.n_bars,
            bar_interval_secs: base.bar_interval_ns as f64 / 1e9,
            underlying_vol: base.underlying_vol,
            informed_strength: base.informed_strength,
            informed_volume_scale: base.informed_volume_scale,
            noise_vol: base.noise_vol,
            return_scale: base.return_scale,
            spot: base.spot0,
            start_date: "2026-01-05".into(),
            expiry_days: 90,
            oi_initial: base.oi.initial,
            oi_daily_jitter: base.oi.daily_jitter,
            hedge_intercept: base.hedge.intercept,
            hedge_abs_return: base.hedge.abs_underlying_return,
            hedge_abs_oi: base.hedge.abs_oi_change,
            hedge_lag_signed: base.hedge.lagged_signed_volume,
            underlying_volume_base: base.underlying_volume_base,
            vol_reversion: base.vol_reversion,
            vol_step: base.vol_step,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Config(format!("cannot parse config {}: {e}", p.display()))
                })
            }
        }
    }

    pub fn trades_path(&self) -> PathBuf {
        self.data
            .trades
            .clone()
            .unwrap_or_else(|| self.out_dir.join("trades.csv"))
    }

    pub fn quotes_path(&self) -> PathBuf {
        self.data
            .quotes
            .clone()
            .unwrap_or_else(|| self.out_dir.join("quotes.csv"))
    }

    pub fn open_interest_path(&self) -> PathBuf {
        self.data
            .open_interest
            .clone()
            .unwrap_or_else(|| self.out_dir.join("open_interest.csv"))
    }

    pub fn contract(&self) -> Result<OptionContract, CliError> {
        let expiry_ns = time::parse_date_ns(&self.bars.expiry).ok_or_else(|| {
            CliError::Config(format!("bars.expiry {:?} is not YYYY-MM-DD", self.bars.expiry))
        })?;
        Ok(OptionContract {
            underlying_id: self.bars.underlying_id.clone(),
            strike: self.bars.strike,
            expiry_ns,
            right: self.bars.right,
        })
    }

    pub fn residual_config(&self) -> ResidualConfig {
        ResidualConfig {
            window: self.residual.window,
            min_std_floor: self.residual.min_std_floor,
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        let start_ns = time::parse_date_ns(&self.synth.start_date).ok_or_else(|| {
            CliError::Config(format!(
                "synth.start_date {:?} is not YYYY-MM-DD",
                self.synth.start_date
            ))
        })?;
        let s = &self.synth;
        Ok(SynthConfig {
            n_bars: s.n_bars,
            seed: self.seed,
            underlying_vol: s.underlying_vol,
            bar_interval_ns: (s.bar_interval_secs * 1e9) as i64,
            hedge: HedgeCoefficients {
                intercept: s.hedge_intercept,
                abs_underlying_return: s.hedge_abs_return,
                abs_oi_change: s.hedge_abs_oi,
                lagged_signed_volume: s.hedge_lag_signed,
            },
            informed_strength: s.informed_strength,
            informed_volume_scale: s.informed_volume_scale,
            noise_vol: s.noise_vol,
            return_scale: s.return_scale,
            oi: OiPathParams {
                initial: s.oi_initial,
                daily_jitter: s.oi_daily_jitter,
            },
            contract: OptionContract {
                underlying_id: self.bars.underlying_id.clone(),
                strike: self.bars.strike,
                expiry_ns: start_ns + s.expiry_days * time::NANOS_PER_DAY,
                right: self.bars.right,
            },
            option_id: self.bars.option_id.clone(),
            spot0: s.spot,
            rate: self.bars.rate,
            start_ns,
            vol_reversion: s.vol_reversion,
            vol_step: s.vol_step,
            underlying_volume_base: s.underlying_volume_base,
        })
    }
}
