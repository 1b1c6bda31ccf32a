//! Seeded synthetic market generator.
//!
//! The generative story: a market maker hedges mechanically (signed option
//! flow explained by underlying moves, open-interest turnover and its own
//! momentum), while an informed participant trades ahead of next-bar option
//! returns. Per bar `t` the informed z-score `z_t` adds
//! `informed_strength · z_t · return_scale` to the option's log return over
//! bar `t+1` (to leading order in the bar return), injected through the
//! underlying path scaled by the option's elasticity. Everything the
//! evaluation needs to verify recovery — planted z, true σ, the volume
//! decomposition — is recorded in a ground-truth table.
//!
//! All randomness flows from one 64-bit seed through per-component
//! [`SplitMix64`] streams, so identical configs reproduce byte-identical
//! streams on any platform.

use std::io::Write;

use thiserror::Error;

use crate::impliedvol::{bs_delta, bs_price, OptionRight, PricingInputs};
use crate::marketdata::{OpenInterestSnapshot, OptionContract, QuoteTick, TradeTick};
use crate::residual::{ResidualConfig, ResidualPoint};
use crate::rng::SplitMix64;
use crate::time::{self, NANOS_PER_DAY};

#[derive(Debug, Error)]
#[error("invalid synth config: {0}")]
pub struct ConfigError(pub String);

/// RNG stream assignment; the numeric tags are part of the format.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Price = 0,
    VolPath = 1,
    Informed = 2,
    VolumeNoise = 3,
    OiPath = 4,
    UnderlyingVolume = 5,
}

fn stream(seed: u64, which: Stream) -> SplitMix64 {
    SplitMix64::stream(seed, which as u64)
}

/// Linear response of hedging flow to its drivers, in contracts.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct HedgeCoefficients {
    pub intercept: f64,
    /// Contracts per unit |underlying log return|.
    pub abs_underlying_return: f64,
    /// Contracts per unit |ΔOI|.
    pub abs_oi_change: f64,
    /// Contracts per lagged signed contract (|·| < 1 for stationarity).
    pub lagged_signed_volume: f64,
}

impl Default for HedgeCoefficients {
    fn default() -> Self {
        Self {
            intercept: 25.0,
            abs_underlying_return: 40_000.0,
            abs_oi_change: 0.05,
            lagged_signed_volume: 0.25,
        }
    }
}

/// Daily open-interest random walk.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OiPathParams {
    pub initial: u64,
    pub daily_jitter: f64,
}

impl Default for OiPathParams {
    fn default() -> Self {
        Self {
            initial: 50_000,
            daily_jitter: 400.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_bars: usize,
    pub seed: u64,
    /// Base underlying volatility per √year.
    pub underlying_vol: f64,
    pub bar_interval_ns: i64,
    pub hedge: HedgeCoefficients,
    /// λ*: option log-return gain per unit informed z, in units of
    /// `return_scale`. The ground-truth analogue of the fitted λ.
    pub informed_strength: f64,
    /// Contracts of informed flow per unit z.
    pub informed_volume_scale: f64,
    /// Standard deviation of unexplained volume noise, contracts.
    pub noise_vol: f64,
    /// Option log-return injected per unit (informed_strength · z).
    pub return_scale: f64,
    pub oi: OiPathParams,
    pub contract: OptionContract,
    pub option_id: String,
    pub spot0: f64,
    pub rate: f64,
    pub start_ns: i64,
    /// Mean-reversion rate of log σ per bar.
    pub vol_reversion: f64,
    /// Innovation std of log σ per bar.
    pub vol_step: f64,
    /// Typical underlying trade size per bar.
    pub underlying_volume_base: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let start_ns = time::parse_date_ns("2026-01-05").expect("valid date");
        Self {
            n_bars: 2_000,
            seed: 42,
            underlying_vol: 0.2,
            bar_interval_ns: 60 * time::NANOS_PER_SEC,
            hedge: HedgeCoefficients::default(),
            informed_strength: 0.8,
            informed_volume_scale: 120.0,
            noise_vol: 60.0,
            return_scale: 0.002,
            oi: OiPathParams::default(),
            contract: OptionContract {
                underlying_id: "UND".into(),
                strike: 100.0,
                expiry_ns: start_ns + 90 * NANOS_PER_DAY,
                right: OptionRight::Call,
            },
            option_id: "OPT".into(),
            spot0: 100.0,
            rate: 0.0,
            start_ns,
            vol_reversion: 0.01,
            vol_step: 0.0025,
            underlying_volume_base: 5_000.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_bars < 200 {
            return Err(ConfigError(format!(
                "n_bars {} violates the n_bars >= 200 invariant",
                self.n_bars
            )));
        }
        if self.noise_vol.is_nan() || self.noise_vol < 0.0 {
            return Err(ConfigError(format!("noise_vol {} must be >= 0", self.noise_vol)));
        }
        if self.bar_interval_ns <= 0 {
            return Err(ConfigError("bar interval must be positive".into()));
        }
        if self.underlying_vol.is_nan() || self.underlying_vol <= 0.0 {
            return Err(ConfigError("underlying vol must be positive".into()));
        }
        if !(self.spot0 > 0.0 && self.contract.strike > 0.0) {
            return Err(ConfigError("spot and strike must be positive".into()));
        }
        if self.informed_volume_scale < 0.0 {
            return Err(ConfigError("informed_volume_scale must be >= 0".into()));
        }
        if self.hedge.lagged_signed_volume.abs() >= 1.0 {
            return Err(ConfigError(
                "lagged_signed_volume coefficient must have magnitude < 1".into(),
            ));
        }
        let last_tick = self.start_ns + self.n_bars as i64 * self.bar_interval_ns;
        if self.contract.expiry_ns <= last_tick {
            return Err(ConfigError(format!(
                "expiry {} not strictly after the last tick {}",
                self.contract.expiry_ns, last_tick
            )));
        }
        Ok(())
    }
}

/// Per-bar ground truth. The CSV export carries the first six fields; the
/// rest support the independent residual oracle and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub bar_start_ns: i64,
    /// Planted informed z-score.
    pub z_informed: f64,
    /// True instantaneous σ used for quoting.
    pub true_sigma: f64,
    pub hedge_volume: i64,
    pub informed_volume: i64,
    pub noise_volume: i64,
    /// Log return of the underlying over this bar (0 for bar 0).
    pub underlying_log_return: f64,
    pub open_interest: u64,
    /// Option log-return contribution injected into this bar by z_{t−1}.
    pub injected_return: f64,
}

impl GroundTruthRow {
    pub fn signed_volume(&self) -> i64 {
        self.hedge_volume + self.informed_volume + self.noise_volume
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub trades: Vec<TradeTick>,
    pub quotes: Vec<QuoteTick>,
    pub open_interest: Vec<OpenInterestSnapshot>,
    pub ground_truth: Vec<GroundTruthRow>,
}

/// Generates one synthetic market dataset.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, ConfigError> {
    config.validate()?;
    let n = config.n_bars;
    let interval = config.bar_interval_ns;
    let dt = interval as f64 / time::NANOS_PER_YEAR;
    let sqrt_dt = dt.sqrt();

    let mut price_rng = stream(config.seed, Stream::Price);
    let mut vol_rng = stream(config.seed, Stream::VolPath);
    let mut informed_rng = stream(config.seed, Stream::Informed);
    let mut noise_rng = stream(config.seed, Stream::VolumeNoise);
    let mut oi_rng = stream(config.seed, Stream::OiPath);
    let mut uvol_rng = stream(config.seed, Stream::UnderlyingVolume);

    // Daily OI snapshots covering every bar date.
    let first_day = time::day_floor_ns(config.start_ns);
    let last_day = time::day_floor_ns(config.start_ns + (n as i64 - 1) * interval);
    let mut open_interest = Vec::new();
    let mut oi_level = config.oi.initial as i64;
    let mut day = first_day;
    while day <= last_day {
        open_interest.push(OpenInterestSnapshot {
            as_of_ns: day,
            instrument_id: config.option_id.clone(),
            open_interest: oi_level.max(0) as u64,
        });
        oi_level = (oi_level + (config.oi.daily_jitter * oi_rng.next_normal()).round() as i64)
            .max(0);
        day += NANOS_PER_DAY;
    }
    let oi_for = |ts_ns: i64| -> u64 {
        let idx = ((time::day_floor_ns(ts_ns) - first_day) / NANOS_PER_DAY) as usize;
        open_interest[idx].open_interest
    };

    let mut trades = Vec::with_capacity(4 * n);
    let mut quotes = Vec::with_capacity(2 * n);
    let mut ground_truth = Vec::with_capacity(n);

    let base_vol = config.underlying_vol;
    let mut log_sigma = base_vol.ln();
    let mut log_spot = config.spot0.ln();
    let mut prev_sigma = base_vol;
    let mut prev_elasticity = 1.0f64;
    let mut prev_z = 0.0f64;
    let mut prev_signed: i64 = 0;
    let mut prev_oi: u64 = oi_for(config.start_ns);

    for i in 0..n {
        let ts = config.start_ns + i as i64 * interval;

        let mut bar_return = 0.0;
        let mut injected = 0.0;
        if i > 0 {
            log_sigma += config.vol_reversion * (base_vol.ln() - log_sigma)
                + config.vol_step * vol_rng.next_normal();
            injected = config.informed_strength * prev_z * config.return_scale;
            bar_return = (-0.5 * prev_sigma * prev_sigma) * dt
                + prev_sigma * sqrt_dt * price_rng.next_normal()
                + injected / prev_elasticity;
            log_spot += bar_return;
        }
        let sigma = log_sigma.exp();
        let spot = log_spot.exp();
        let t_expiry = time::years_between(ts, config.contract.expiry_ns);
        let pricing = PricingInputs {
            spot,
            strike: config.contract.strike,
            rate: config.rate,
            time_to_expiry: t_expiry,
            vol: sigma,
            right: config.contract.right,
        };
        let option_mid = bs_price(&pricing).expect("valid synthetic pricing inputs");
        let delta = bs_delta(&pricing).expect("valid synthetic pricing inputs");
        let elasticity = (delta.abs() * spot / option_mid).max(1e-6);

        // Quotes: underlying at bar start, option just after.
        quotes.push(QuoteTick {
            ts_ns: ts,
            instrument_id: config.contract.underlying_id.clone(),
            bid: spot - 0.01,
            ask: spot + 0.01,
        });
        let half_spread = (0.002 * option_mid + 0.001).min(0.5 * option_mid);
        let option_quote_ts = ts + interval / 100;
        quotes.push(QuoteTick {
            ts_ns: option_quote_ts,
            instrument_id: config.option_id.clone(),
            bid: option_mid - half_spread,
            ask: option_mid + half_spread,
        });

        // Volume components.
        let oi_now = oi_for(ts);
        let abs_doi = if i == 0 {
            0.0
        } else {
            (oi_now as f64 - prev_oi as f64).abs()
        };
        let lag_signed = if i == 0 { 0.0 } else { prev_signed as f64 };
        let hedge = (config.hedge.intercept
            + config.hedge.abs_underlying_return * bar_return.abs()
            + config.hedge.abs_oi_change * abs_doi
            + config.hedge.lagged_signed_volume * lag_signed)
            .round() as i64;
        let z = informed_rng.next_normal();
        let informed = (config.informed_volume_scale * z).round() as i64;
        let noise = (config.noise_vol * noise_rng.next_normal()).round() as i64;

        let bid = option_mid - half_spread;
        let ask = option_mid + half_spread;
        for (offset, component) in [(2i64, hedge), (3, informed), (4, noise)] {
            if component == 0 {
                continue;
            }
            trades.push(TradeTick {
                ts_ns: ts + interval * offset / 8,
                instrument_id: config.option_id.clone(),
                price: if component > 0 { ask } else { bid },
                size: component.unsigned_abs(),
                venue: None,
            });
        }
        let usize_draw = (config.underlying_volume_base
            * (0.25 * uvol_rng.next_normal()).exp())
        .round()
        .max(1.0) as u64;
        trades.push(TradeTick {
            ts_ns: ts + interval * 5 / 8,
            instrument_id: config.contract.underlying_id.clone(),
            price: spot + 0.01,
            size: usize_draw,
            venue: None,
        });

        ground_truth.push(GroundTruthRow {
            bar_start_ns: ts,
            z_informed: z,
            true_sigma: sigma,
            hedge_volume: hedge,
            informed_volume: informed,
            noise_volume: noise,
            underlying_log_return: bar_return,
            open_interest: oi_now,
            injected_return: injected,
        });

        prev_sigma = sigma;
        prev_elasticity = elasticity;
        prev_z = z;
        prev_signed = hedge + informed + noise;
        prev_oi = oi_now;
    }

    Ok(SynthDataset {
        trades,
        quotes,
        open_interest,
        ground_truth,
    })
}

/// Reference ΔR computation from the ground-truth table.
///
/// Deliberately independent of the residual module: regressors come from the
/// recorded ground truth and the rolling fit solves centered, equilibrated
/// normal equations by Gaussian elimination instead of the production QR
/// path. Agreement between the two is a correctness check on both.
pub fn oracle_residuals(
    ground_truth: &[GroundTruthRow],
    config: &ResidualConfig,
) -> Vec<ResidualPoint> {
    let w = config.window;
    let n = ground_truth.len();
    if n <= w {
        return Vec::new();
    }

    let regressors: Vec<[f64; 3]> = ground_truth
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if i == 0 {
                [row.underlying_log_return.abs(), 0.0, 0.0]
            } else {
                let prev = &ground_truth[i - 1];
                [
                    row.underlying_log_return.abs(),
                    (row.open_interest as f64 - prev.open_interest as f64).abs(),
                    prev.signed_volume() as f64,
                ]
            }
        })
        .collect();
    let targets: Vec<f64> = ground_truth
        .iter()
        .map(|r| r.signed_volume() as f64)
        .collect();

    let mut points = Vec::with_capacity(n - w);
    for t in w..n {
        let window_rows = &regressors[t - w..t];
        let window_y = &targets[t - w..t];

        // Keep regressors that vary over the window.
        let active: Vec<usize> = (0..3)
            .filter(|&j| window_rows.iter().any(|r| r[j] != window_rows[0][j]))
            .collect();

        let (slopes, intercept) = normal_equation_fit(window_rows, window_y, &active);

        let predict = |row: &[f64; 3]| -> f64 {
            intercept
                + active
                    .iter()
                    .zip(&slopes)
                    .map(|(&j, s)| s * row[j])
                    .sum::<f64>()
        };
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (row, &y) in window_rows.iter().zip(window_y) {
            let r = y - predict(row);
            sum += r;
            sum_sq += r * r;
        }
        let m = w as f64;
        let std = ((sum_sq / m - (sum / m) * (sum / m)).max(0.0)).sqrt();

        let expected = predict(&regressors[t]);
        let raw = targets[t] - expected;
        points.push(ResidualPoint {
            bar_start_ns: ground_truth[t].bar_start_ns,
            expected_hedging_volume: expected,
            raw_residual: raw,
            delta_r: raw / std.max(config.min_std_floor),
        });
    }
    points
}

/// OLS via centered, column-equilibrated normal equations solved by Gaussian
/// elimination with partial pivoting. Returns slopes (for `active` columns)
/// and the intercept.
#[allow(clippy::needless_range_loop)]
fn normal_equation_fit(rows: &[[f64; 3]], y: &[f64], active: &[usize]) -> (Vec<f64>, f64) {
    let n = rows.len();
    let k = active.len();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    if k == 0 {
        return (Vec::new(), y_mean);
    }

    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    for &j in active {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / nf;
        let mut col: Vec<f64> = rows.iter().map(|r| r[j] - mean).collect();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for v in &mut col {
            *v /= scale;
        }
        means.push(mean);
        scales.push(scale);
        centered.push(col);
    }
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    // Gram matrix and right-hand side.
    let mut a = vec![vec![0.0f64; k + 1]; k];
    for p in 0..k {
        for q in 0..k {
            a[p][q] = centered[p].iter().zip(&centered[q]).map(|(x, z)| x * z).sum();
        }
        a[p][k] = centered[p].iter().zip(&yc).map(|(x, z)| x * z).sum();
    }

    // Gaussian elimination with partial pivoting on the augmented system.
    let mut solved = vec![0.0f64; k];
    let mut rows_order: Vec<usize> = (0..k).collect();
    for col in 0..k {
        let (pivot_pos, pivot_val) = rows_order[col..]
            .iter()
            .enumerate()
            .map(|(offset, &r)| (offset + col, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).expect("finite"))
            .expect("non-empty");
        rows_order.swap(col, pivot_pos);
        let pr = rows_order[col];
        if pivot_val < 1e-12 {
            continue; // dependent column keeps a zero slope
        }
        for &r in &rows_order[col + 1..] {
            let factor = a[r][col] / a[pr][col];
            for c in col..=k {
                a[r][c] -= factor * a[pr][c];
            }
        }
    }
    for col in (0..k).rev() {
        let r = rows_order[col];
        if a[r][col].abs() < 1e-12 {
            solved[col] = 0.0;
            continue;
        }
        let mut acc = a[r][k];
        for c in col + 1..k {
            acc -= a[r][c] * solved[c];
        }
        solved[col] = acc / a[r][col];
    }

    let slopes: Vec<f64> = solved
        .iter()
        .zip(&scales)
        .map(|(s, scale)| s / scale)
        .collect();
    let intercept = y_mean
        - slopes
            .iter()
            .zip(&means)
            .map(|(s, m)| s * m)
            .sum::<f64>();
    (slopes, intercept)
}

pub const GROUND_TRUTH_HEADER: &str =
    "bar_start_ns,z_informed,true_sigma,hedge_volume,informed_volume,noise_volume";

pub fn write_ground_truth_csv(
    mut w: impl Write,
    rows: &[GroundTruthRow],
) -> std::io::Result<()> {
    writeln!(w, "{GROUND_TRUTH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.bar_start_ns, r.z_informed, r.true_sigma, r.hedge_volume, r.informed_volume, r.noise_volume
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::spearman;
    use crate::marketdata::{self, AggregationConfig, BlackScholesIv};
    use crate::residual;

    fn small_config(seed: u64) -> SynthConfig {
        SynthConfig {
            n_bars: 400,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_invariants_are_enforced() {
        let bad = SynthConfig {
            n_bars: 10,
            ..SynthConfig::default()
        };
        let err = bad.validate().unwrap_err();
        assert!(err.to_string().contains("n_bars"));
        assert!(err.to_string().contains("200"));

        let bad = SynthConfig {
            noise_vol: -1.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn same_seed_reproduces_byte_identical_streams() {
        let a = generate(&small_config(7)).unwrap();
        let b = generate(&small_config(7)).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        marketdata::parse::write_trades_csv(&mut buf_a, &a.trades).unwrap();
        marketdata::parse::write_trades_csv(&mut buf_b, &b.trades).unwrap();
        assert_eq!(buf_a, buf_b);
        buf_a.clear();
        buf_b.clear();
        write_ground_truth_csv(&mut buf_a, &a.ground_truth).unwrap();
        write_ground_truth_csv(&mut buf_b, &b.ground_truth).unwrap();
        assert_eq!(buf_a, buf_b);
        let c = generate(&small_config(8)).unwrap();
        assert_ne!(a.ground_truth, c.ground_truth);
    }

    #[test]
    fn quotes_never_cross_and_respect_bounds() {
        let data = generate(&small_config(11)).unwrap();
        let cfg = small_config(11);
        for q in &data.quotes {
            assert!(q.bid > 0.0 && q.bid < q.ask, "crossed quote at {}", q.ts_ns);
        }
        // Option mids sit strictly inside the no-arbitrage band.
        let gt = &data.ground_truth;
        let mids: Vec<(&QuoteTick, &GroundTruthRow)> = data
            .quotes
            .iter()
            .filter(|q| q.instrument_id == cfg.option_id)
            .zip(gt.iter())
            .collect();
        assert_eq!(mids.len(), gt.len());
        for (q, _row) in mids {
            let spot_quote = data
                .quotes
                .iter()
                .rfind(|u| u.instrument_id == cfg.contract.underlying_id && u.ts_ns <= q.ts_ns)
                .unwrap();
            let spot = spot_quote.mid();
            let mid = q.mid();
            assert!(mid > (spot - cfg.contract.strike).max(0.0));
            assert!(mid < spot);
        }
    }

    #[test]
    fn volume_decomposition_is_exact() {
        let cfg = small_config(13);
        let data = generate(&cfg).unwrap();
        for row in &data.ground_truth {
            let bar_trades: i64 = data
                .trades
                .iter()
                .filter(|t| {
                    t.instrument_id == cfg.option_id
                        && t.ts_ns >= row.bar_start_ns
                        && t.ts_ns < row.bar_start_ns + cfg.bar_interval_ns
                })
                .map(|t| t.size as i64)
                .sum();
            let total = row.hedge_volume.abs() + row.informed_volume.abs() + row.noise_volume.abs();
            assert_eq!(bar_trades, total, "bar {}", row.bar_start_ns);
        }
    }

    #[test]
    fn oracle_and_production_residuals_agree() {
        let cfg = small_config(17);
        let data = generate(&cfg).unwrap();
        let agg = AggregationConfig::new(cfg.option_id.clone(), cfg.contract.underlying_id.clone(), cfg.bar_interval_ns);
        let iv = BlackScholesIv {
            contract: cfg.contract.clone(),
            rate: cfg.rate,
        };
        let bars =
            marketdata::aggregate_bars(&data.trades, &data.quotes, &data.open_interest, &iv, &agg)
                .unwrap();
        assert_eq!(bars.len(), cfg.n_bars);
        let rcfg = ResidualConfig::default();
        let produced = residual::compute_residuals(&bars, &rcfg).unwrap();
        let reference = oracle_residuals(&data.ground_truth, &rcfg);
        assert_eq!(produced.len(), reference.len());
        for (p, r) in produced.iter().zip(&reference) {
            assert_eq!(p.bar_start_ns, r.bar_start_ns);
            assert!(
                (p.delta_r - r.delta_r).abs() <= 1e-9,
                "bar {}: {} vs {}",
                p.bar_start_ns,
                p.delta_r,
                r.delta_r
            );
        }
        // Both implementations agree on the most extreme bar.
        let argmax = |pts: &[ResidualPoint]| {
            pts.iter()
                .max_by(|a, b| a.delta_r.abs().partial_cmp(&b.delta_r.abs()).unwrap())
                .unwrap()
                .bar_start_ns
        };
        assert_eq!(argmax(&produced), argmax(&reference));
    }

    #[test]
    fn hedging_only_dataset_has_negligible_residuals() {
        // Integer-exact hedging rule, no informed or noise flow.
        let cfg = SynthConfig {
            hedge: HedgeCoefficients {
                intercept: 30.0,
                abs_underlying_return: 0.0,
                abs_oi_change: 1.0,
                lagged_signed_volume: 0.0,
            },
            informed_volume_scale: 0.0,
            noise_vol: 0.0,
            ..small_config(19)
        };
        let data = generate(&cfg).unwrap();
        let rcfg = ResidualConfig::default();
        let reference = oracle_residuals(&data.ground_truth, &rcfg);
        for p in &reference {
            assert!(p.raw_residual.abs() < 1e-9, "raw residual {}", p.raw_residual);
            assert!(p.delta_r.abs() < 1e-2, "ΔR {}", p.delta_r);
        }
    }

    /// Option mids per bar; quotes are emitted [underlying, option] per bar.
    fn option_mids(data: &SynthDataset, cfg: &SynthConfig) -> Vec<f64> {
        let mids: Vec<f64> = data
            .quotes
            .iter()
            .filter(|q| q.instrument_id == cfg.option_id)
            .map(|q| q.mid())
            .collect();
        assert_eq!(mids.len(), cfg.n_bars);
        mids
    }

    /// Pairs (z_t, option log return over bar t+1).
    fn z_and_next_return(data: &SynthDataset, cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
        let mids = option_mids(data, cfg);
        let z: Vec<f64> = data.ground_truth[..cfg.n_bars - 1]
            .iter()
            .map(|r| r.z_informed)
            .collect();
        let next_ret: Vec<f64> = mids.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        (z, next_ret)
    }

    #[test]
    fn planted_signal_correlates_with_next_bar_return_when_strong() {
        // λ* = 0.8: positive z/next-return correlation on every tested seed.
        for seed in 0..100 {
            let cfg = SynthConfig {
                informed_strength: 0.8,
                ..small_config(seed)
            };
            let data = generate(&cfg).unwrap();
            let (z, next_ret) = z_and_next_return(&data, &cfg);
            let rho = spearman(&z, &next_ret);
            assert!(rho > 0.0, "seed {seed}: correlation {rho} not positive");
        }
    }

    #[test]
    fn null_signal_correlation_stays_in_band() {
        // λ* = 0: |corr(z, next return)| within ±2/√n in ≥ 90 of 100 seeds.
        let mut hits = 0;
        for seed in 0..100 {
            let cfg = SynthConfig {
                informed_strength: 0.0,
                ..small_config(1000 + seed)
            };
            let data = generate(&cfg).unwrap();
            let (z, next_ret) = z_and_next_return(&data, &cfg);
            let rho = spearman(&z, &next_ret);
            if rho.abs() <= 2.0 / (z.len() as f64).sqrt() {
                hits += 1;
            }
        }
        assert!(hits >= 90, "only {hits}/100 seeds inside the null band");
    }
}
