//! Market-data ingestion: event types, trade-side classification and
//! time-bar aggregation.
//!
//! Raw trade/quote/open-interest records come in through [`parse`] (file
//! replay) or [`rest`] (paginated REST adapter) and are rolled up into
//! [`MarketBar`]s by [`aggregate_bars`].

pub mod parse;
pub mod rest;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impliedvol::{self, ImpliedVolRequest, OptionRight};
use crate::time;

/// Records arriving more than this many positions out of timestamp order are
/// a hard error rather than being silently reordered.
pub const SORT_BUFFER: usize = 10_000;

/// Default staleness bound for prevailing quotes in side classification.
pub const DEFAULT_QUOTE_STALENESS_NS: i64 = 60 * time::NANOS_PER_SEC;

/// Default number of bars an implied vol may be forward-filled.
pub const DEFAULT_SIGMA_FFILL_LIMIT: usize = 5;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("input unsorted beyond the {SORT_BUFFER}-record sort buffer at line {line}")]
    UnsortedInput { line: u64 },
    #[error("no market data in any input stream")]
    NoData,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("rest adapter error: {0}")]
    Rest(String),
}

/// One executed trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeTick {
    pub ts_ns: i64,
    pub instrument_id: String,
    pub price: f64,
    pub size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
}

/// One top-of-book quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteTick {
    pub ts_ns: i64,
    pub instrument_id: String,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteTick {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// Option contract identity used for implied-vol inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionContract {
    pub underlying_id: String,
    pub strike: f64,
    /// Expiry date, UTC-midnight nanoseconds.
    pub expiry_ns: i64,
    pub right: OptionRight,
}

/// Daily open-interest publication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenInterestSnapshot {
    /// Publication date, UTC-midnight nanoseconds; effective from this day on.
    pub as_of_ns: i64,
    pub instrument_id: String,
    pub open_interest: u64,
}

/// Direction of the most recent option price move, for the tick test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastMove {
    Up,
    Down,
    Flat,
}

/// Side classification outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Buy,
    Sell,
    Unclassified,
}

/// Quote-midpoint rule with tick-test fallback (Lee–Ready style).
///
/// Above the mid is a buy, below is a sell; exactly at the mid the last price
/// move decides, and a flat tape stays unclassified. Quotes older than
/// `staleness_ns` do not classify anything.
pub fn classify_side(
    trade: &TradeTick,
    prevailing_quote: &QuoteTick,
    last_move: LastMove,
    staleness_ns: i64,
) -> Side {
    debug_assert!(prevailing_quote.ts_ns <= trade.ts_ns);
    if trade.ts_ns - prevailing_quote.ts_ns > staleness_ns {
        return Side::Unclassified;
    }
    let mid = prevailing_quote.mid();
    if trade.price > mid {
        Side::Buy
    } else if trade.price < mid {
        Side::Sell
    } else {
        match last_move {
            LastMove::Up => Side::Buy,
            LastMove::Down => Side::Sell,
            LastMove::Flat => Side::Unclassified,
        }
    }
}

/// One aggregated interval of option and underlying activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketBar {
    pub bar_start_ns: i64,
    pub interval_ns: i64,
    /// Total option contracts traded (V_t).
    pub option_volume: u64,
    /// Buy size minus sell size of classified option trades.
    pub signed_option_volume: i64,
    pub buy_volume: u64,
    pub sell_volume: u64,
    pub unclassified_volume: u64,
    pub buy_trades: u32,
    pub sell_trades: u32,
    pub unclassified_trades: u32,
    /// Forward-filled daily open interest.
    pub open_interest: u64,
    /// Implied vol of the last option mid in the bar, forward-filled up to
    /// the configured limit; absent when nothing valid is available.
    pub implied_vol: Option<f64>,
    pub option_mid: f64,
    pub underlying_mid: f64,
    /// Log return of `underlying_mid` versus the previous bar (0 for the
    /// first bar of a series).
    pub underlying_log_return: f64,
    /// Total underlying units traded in the bar.
    pub underlying_volume: u64,
}

impl MarketBar {
    pub fn trade_count(&self) -> u32 {
        self.buy_trades + self.sell_trades + self.unclassified_trades
    }
}

/// Supplies per-bar implied vol from the bar's closing mids.
pub trait IvProvider {
    fn implied_vol(&self, option_mid: f64, underlying_mid: f64, ts_ns: i64) -> Option<f64>;
}

/// Black–Scholes inversion against a fixed contract.
pub struct BlackScholesIv {
    pub contract: OptionContract,
    pub rate: f64,
}

impl IvProvider for BlackScholesIv {
    fn implied_vol(&self, option_mid: f64, underlying_mid: f64, ts_ns: i64) -> Option<f64> {
        if ts_ns >= self.contract.expiry_ns {
            return None;
        }
        impliedvol::implied_vol(&ImpliedVolRequest {
            observed_price: option_mid,
            spot: underlying_mid,
            strike: self.contract.strike,
            rate: self.rate,
            time_to_expiry: time::years_between(ts_ns, self.contract.expiry_ns),
            right: self.contract.right,
        })
        .ok()
    }
}

/// Aggregation parameters.
#[derive(Debug, Clone)]
pub struct AggregationConfig {
    pub option_id: String,
    pub underlying_id: String,
    pub interval_ns: i64,
    pub quote_staleness_ns: i64,
    pub sigma_ffill_limit: usize,
}

impl AggregationConfig {
    pub fn new(option_id: impl Into<String>, underlying_id: impl Into<String>, interval_ns: i64) -> Self {
        Self {
            option_id: option_id.into(),
            underlying_id: underlying_id.into(),
            interval_ns,
            quote_staleness_ns: DEFAULT_QUOTE_STALENESS_NS,
            sigma_ffill_limit: DEFAULT_SIGMA_FFILL_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Quote,
    Trade,
}

/// Rolls time-sorted trade/quote/open-interest streams into bars.
///
/// A bar is emitted for every interval containing at least one option trade
/// or quote; empty intervals are skipped. Intervals are aligned to epoch
/// multiples of `interval_ns`. Bars before the first option quote or first
/// underlying quote are skipped (no mid to carry). Events for instruments
/// other than the configured option and underlying are ignored.
pub fn aggregate_bars(
    trades: &[TradeTick],
    quotes: &[QuoteTick],
    oi_snapshots: &[OpenInterestSnapshot],
    iv: &dyn IvProvider,
    config: &AggregationConfig,
) -> Result<Vec<MarketBar>, MarketDataError> {
    assert!(config.interval_ns > 0, "interval must be positive");
    if trades.is_empty() && quotes.is_empty() && oi_snapshots.is_empty() {
        return Err(MarketDataError::NoData);
    }

    // Merge trades and quotes into one stream ordered by (ts, quotes-first)
    // so a quote stamped at the trade's own timestamp is prevailing.
    let mut events: Vec<(i64, EventKind, usize)> = Vec::with_capacity(trades.len() + quotes.len());
    events.extend(quotes.iter().enumerate().map(|(i, q)| (q.ts_ns, EventKind::Quote, i)));
    events.extend(trades.iter().enumerate().map(|(i, t)| (t.ts_ns, EventKind::Trade, i)));
    events.sort_by_key(|&(ts, kind, idx)| (ts, kind == EventKind::Trade, idx));

    let mut oi_by_day: Vec<(i64, u64)> = oi_snapshots
        .iter()
        .filter(|s| s.instrument_id == config.option_id)
        .map(|s| (s.as_of_ns, s.open_interest))
        .collect();
    oi_by_day.sort_by_key(|&(ns, _)| ns);
    let oi_at = |ts_ns: i64| -> u64 {
        let day = time::day_floor_ns(ts_ns);
        match oi_by_day.binary_search_by_key(&day, |&(ns, _)| ns) {
            Ok(i) => oi_by_day[i].1,
            Err(0) => 0,
            Err(i) => oi_by_day[i - 1].1,
        }
    };

    struct Accum {
        bar_start_ns: i64,
        option_volume: u64,
        buy_volume: u64,
        sell_volume: u64,
        unclassified_volume: u64,
        buy_trades: u32,
        sell_trades: u32,
        unclassified_trades: u32,
        underlying_volume: u64,
        saw_option_event: bool,
        saw_option_quote: bool,
        last_quote_ts: i64,
    }

    let mut bars: Vec<MarketBar> = Vec::new();
    let mut acc: Option<Accum> = None;

    // Carried state across bars.
    let mut last_option_quote: Option<QuoteTick> = None;
    let mut last_underlying_mid: Option<f64> = None;
    let mut last_trade_price: Option<f64> = None;
    let mut last_move = LastMove::Flat;
    let mut prev_underlying_mid: Option<f64> = None;
    let mut sigma_state: Option<(f64, usize)> = None; // (vol, bars since fresh inversion)

    let flush = |acc: Accum,
                     bars: &mut Vec<MarketBar>,
                     option_quote: &Option<QuoteTick>,
                     underlying_mid: &Option<f64>,
                     prev_underlying_mid: &mut Option<f64>,
                     sigma_state: &mut Option<(f64, usize)>| {
        if !acc.saw_option_event {
            return;
        }
        let (option_mid, underlying_mid) = match (option_quote, underlying_mid) {
            (Some(q), Some(u)) => (q.mid(), *u),
            _ => {
                log::debug!(
                    "skipping bar at {} before first option/underlying quote",
                    acc.bar_start_ns
                );
                return;
            }
        };

        let fresh_sigma = if acc.saw_option_quote {
            iv.implied_vol(option_mid, underlying_mid, acc.last_quote_ts)
        } else {
            None
        };
        let implied = match fresh_sigma {
            Some(v) => {
                *sigma_state = Some((v, 0));
                Some(v)
            }
            None => match sigma_state {
                Some((v, age)) if *age < config.sigma_ffill_limit => {
                    *age += 1;
                    Some(*v)
                }
                _ => None,
            },
        };

        let log_return = match prev_underlying_mid {
            Some(prev) => (underlying_mid / *prev).ln(),
            None => 0.0,
        };
        *prev_underlying_mid = Some(underlying_mid);

        bars.push(MarketBar {
            bar_start_ns: acc.bar_start_ns,
            interval_ns: config.interval_ns,
            option_volume: acc.option_volume,
            signed_option_volume: acc.buy_volume as i64 - acc.sell_volume as i64,
            buy_volume: acc.buy_volume,
            sell_volume: acc.sell_volume,
            unclassified_volume: acc.unclassified_volume,
            buy_trades: acc.buy_trades,
            sell_trades: acc.sell_trades,
            unclassified_trades: acc.unclassified_trades,
            open_interest: oi_at(acc.bar_start_ns),
            implied_vol: implied,
            option_mid,
            underlying_mid,
            underlying_log_return: log_return,
            underlying_volume: acc.underlying_volume,
        });
    };

    for (ts, kind, idx) in events {
        let bar_start = ts.div_euclid(config.interval_ns) * config.interval_ns;
        if acc.as_ref().map(|a| a.bar_start_ns) != Some(bar_start) {
            if let Some(done) = acc.take() {
                flush(
                    done,
                    &mut bars,
                    &last_option_quote,
                    &last_underlying_mid,
                    &mut prev_underlying_mid,
                    &mut sigma_state,
                );
            }
            acc = Some(Accum {
                bar_start_ns: bar_start,
                option_volume: 0,
                buy_volume: 0,
                sell_volume: 0,
                unclassified_volume: 0,
                buy_trades: 0,
                sell_trades: 0,
                unclassified_trades: 0,
                underlying_volume: 0,
                saw_option_event: false,
                saw_option_quote: false,
                last_quote_ts: bar_start,
            });
        }
        let a = acc.as_mut().expect("bar accumulator present");

        match kind {
            EventKind::Quote => {
                let q = &quotes[idx];
                if q.instrument_id == config.option_id {
                    last_option_quote = Some(q.clone());
                    a.saw_option_event = true;
                    a.saw_option_quote = true;
                    a.last_quote_ts = q.ts_ns;
                } else if q.instrument_id == config.underlying_id {
                    last_underlying_mid = Some(q.mid());
                }
            }
            EventKind::Trade => {
                let t = &trades[idx];
                if t.instrument_id == config.option_id {
                    a.saw_option_event = true;
                    a.option_volume += t.size;
                    let side = match &last_option_quote {
                        Some(q) if q.ts_ns <= t.ts_ns => {
                            classify_side(t, q, last_move, config.quote_staleness_ns)
                        }
                        _ => Side::Unclassified,
                    };
                    match side {
                        Side::Buy => {
                            a.buy_volume += t.size;
                            a.buy_trades += 1;
                        }
                        Side::Sell => {
                            a.sell_volume += t.size;
                            a.sell_trades += 1;
                        }
                        Side::Unclassified => {
                            a.unclassified_volume += t.size;
                            a.unclassified_trades += 1;
                        }
                    }
                    // Tick-test state: remember the direction of the last
                    // non-flat price change.
                    if let Some(prev) = last_trade_price {
                        if t.price > prev {
                            last_move = LastMove::Up;
                        } else if t.price < prev {
                            last_move = LastMove::Down;
                        }
                    }
                    last_trade_price = Some(t.price);
                } else if t.instrument_id == config.underlying_id {
                    a.underlying_volume += t.size;
                }
            }
        }
    }
    if let Some(done) = acc.take() {
        flush(
            done,
            &mut bars,
            &last_option_quote,
            &last_underlying_mid,
            &mut prev_underlying_mid,
            &mut sigma_state,
        );
    }

    Ok(bars)
}
