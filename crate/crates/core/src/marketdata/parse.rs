//! File replay: CSV / JSON-lines parsing and writing of the market schemas.
//!
//! Column orders are fixed:
//!   trades         `ts_ns,instrument_id,price,size,venue`
//!   quotes         `ts_ns,instrument_id,bid,ask`
//!   open interest  `date,instrument_id,open_interest`
//! The JSON-lines alternative uses identical field names, one object per
//! line. A line whose first byte is `{` is treated as JSON.
//!
//! Malformed rows never abort a parse; they are reported with their line
//! number alongside the valid records. Out-of-order records are tolerated up
//! to the [`SORT_BUFFER`](super::SORT_BUFFER) displacement bound, beyond
//! which the parse fails rather than silently reordering.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{
    MarketDataError, OpenInterestSnapshot, QuoteTick, TradeTick, SORT_BUFFER,
};
use crate::time;

/// Why one input row was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowIssueKind {
    /// Wrong field count or unparseable field.
    MalformedRow,
    /// Parsed fine but violates a domain invariant.
    InvariantViolation,
}

/// One rejected row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub kind: RowIssueKind,
    pub message: String,
}

impl std::fmt::Display for RowIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            RowIssueKind::MalformedRow => "malformed row",
            RowIssueKind::InvariantViolation => "invariant violation",
        };
        write!(f, "line {}: {}: {}", self.line, kind, self.message)
    }
}

/// Valid records (timestamp-sorted) plus per-row rejections.
#[derive(Debug)]
pub struct ParseReport<T> {
    pub records: Vec<T>,
    pub issues: Vec<RowIssue>,
}

pub const TRADES_HEADER: &str = "ts_ns,instrument_id,price,size,venue";
pub const QUOTES_HEADER: &str = "ts_ns,instrument_id,bid,ask";
pub const OPEN_INTEREST_HEADER: &str = "date,instrument_id,open_interest";

/// Validation shared by file replay and the REST adapter.
pub(crate) fn validate_trade(t: &TradeTick) -> Result<(), String> {
    if !(t.price > 0.0 && t.price.is_finite()) {
        return Err(format!("price {} must be > 0", t.price));
    }
    if t.size == 0 {
        return Err("size must be > 0".into());
    }
    if t.instrument_id.is_empty() {
        return Err("instrument_id must be non-empty".into());
    }
    Ok(())
}

pub(crate) fn validate_quote(q: &QuoteTick) -> Result<(), String> {
    if !(q.bid > 0.0 && q.bid.is_finite() && q.ask.is_finite()) {
        return Err(format!("bid {} must be > 0", q.bid));
    }
    if q.bid > q.ask {
        return Err(format!("crossed quote: bid {} > ask {}", q.bid, q.ask));
    }
    if q.instrument_id.is_empty() {
        return Err("instrument_id must be non-empty".into());
    }
    Ok(())
}

fn generic_parse<T, FCsv, FJson>(
    reader: impl BufRead,
    header: &str,
    parse_csv: FCsv,
    parse_json: FJson,
    ts_of: impl Fn(&T) -> i64,
) -> Result<ParseReport<T>, MarketDataError>
where
    FCsv: Fn(&str) -> Result<T, (RowIssueKind, String)>,
    FJson: Fn(&str) -> Result<T, (RowIssueKind, String)>,
{
    let mut records: Vec<(i64, usize, T)> = Vec::new();
    let mut issues = Vec::new();
    let mut running_max = i64::MIN;
    // Timestamps of the most recent SORT_BUFFER records, oldest first.
    let mut window: std::collections::VecDeque<i64> = std::collections::VecDeque::new();

    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = index as u64 + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if line_no == 1 && text == header {
            continue;
        }
        let parsed = if text.starts_with('{') {
            parse_json(text)
        } else {
            parse_csv(text)
        };
        match parsed {
            Ok(record) => {
                let ts = ts_of(&record);
                if window.len() == SORT_BUFFER {
                    let expired = window.pop_front().expect("window non-empty");
                    running_max = running_max.max(expired);
                }
                if ts < running_max {
                    return Err(MarketDataError::UnsortedInput { line: line_no });
                }
                window.push_back(ts);
                records.push((ts, records.len(), record));
            }
            Err((kind, message)) => issues.push(RowIssue {
                line: line_no,
                kind,
                message,
            }),
        }
    }

    records.sort_by_key(|&(ts, seq, _)| (ts, seq));
    Ok(ParseReport {
        records: records.into_iter().map(|(_, _, r)| r).collect(),
        issues,
    })
}

fn malformed(msg: impl Into<String>) -> (RowIssueKind, String) {
    (RowIssueKind::MalformedRow, msg.into())
}

fn violation(msg: impl Into<String>) -> (RowIssueKind, String) {
    (RowIssueKind::InvariantViolation, msg.into())
}

fn json_row<T: DeserializeOwned>(text: &str) -> Result<T, (RowIssueKind, String)> {
    serde_json::from_str(text).map_err(|e| malformed(e.to_string()))
}

fn field<'a>(fields: &[&'a str], idx: usize, name: &str) -> Result<&'a str, (RowIssueKind, String)> {
    fields
        .get(idx)
        .copied()
        .ok_or_else(|| malformed(format!("missing field `{name}`")))
}

fn parse_num<T: std::str::FromStr>(raw: &str, name: &str) -> Result<T, (RowIssueKind, String)> {
    raw.parse()
        .map_err(|_| malformed(format!("field `{name}`: cannot parse {raw:?}")))
}

/// Parses a trade stream (CSV or JSON-lines).
pub fn parse_trades(reader: impl BufRead) -> Result<ParseReport<TradeTick>, MarketDataError> {
    let csv = |text: &str| -> Result<TradeTick, (RowIssueKind, String)> {
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(format!("expected 5 fields, got {}", fields.len())));
        }
        let trade = TradeTick {
            ts_ns: parse_num(field(&fields, 0, "ts_ns")?, "ts_ns")?,
            instrument_id: field(&fields, 1, "instrument_id")?.to_string(),
            price: parse_num(field(&fields, 2, "price")?, "price")?,
            size: parse_num(field(&fields, 3, "size")?, "size")?,
            venue: match field(&fields, 4, "venue")? {
                "" => None,
                v => Some(v.to_string()),
            },
        };
        validate_trade(&trade).map_err(violation)?;
        Ok(trade)
    };
    let json = |text: &str| {
        let trade: TradeTick = json_row(text)?;
        validate_trade(&trade).map_err(violation)?;
        Ok(trade)
    };
    generic_parse(reader, TRADES_HEADER, csv, json, |t| t.ts_ns)
}

/// Parses a quote stream (CSV or JSON-lines). Crossed quotes are rejected.
pub fn parse_quotes(reader: impl BufRead) -> Result<ParseReport<QuoteTick>, MarketDataError> {
    let csv = |text: &str| -> Result<QuoteTick, (RowIssueKind, String)> {
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 fields, got {}", fields.len())));
        }
        let quote = QuoteTick {
            ts_ns: parse_num(field(&fields, 0, "ts_ns")?, "ts_ns")?,
            instrument_id: field(&fields, 1, "instrument_id")?.to_string(),
            bid: parse_num(field(&fields, 2, "bid")?, "bid")?,
            ask: parse_num(field(&fields, 3, "ask")?, "ask")?,
        };
        validate_quote(&quote).map_err(violation)?;
        Ok(quote)
    };
    let json = |text: &str| {
        let quote: QuoteTick = json_row(text)?;
        validate_quote(&quote).map_err(violation)?;
        Ok(quote)
    };
    generic_parse(reader, QUOTES_HEADER, csv, json, |q| q.ts_ns)
}

#[derive(Deserialize)]
struct OiJsonRow {
    date: String,
    instrument_id: String,
    open_interest: u64,
}

/// Parses open-interest snapshots; duplicates per (instrument, date) are
/// invariant violations and the first occurrence wins.
pub fn parse_open_interest(
    reader: impl BufRead,
) -> Result<ParseReport<OpenInterestSnapshot>, MarketDataError> {
    let from_parts = |date: &str, id: String, oi: u64| -> Result<OpenInterestSnapshot, (RowIssueKind, String)> {
        let as_of_ns = time::parse_date_ns(date)
            .ok_or_else(|| malformed(format!("field `date`: cannot parse {date:?}")))?;
        if id.is_empty() {
            return Err(violation("instrument_id must be non-empty"));
        }
        Ok(OpenInterestSnapshot {
            as_of_ns,
            instrument_id: id,
            open_interest: oi,
        })
    };
    let csv = |text: &str| -> Result<OpenInterestSnapshot, (RowIssueKind, String)> {
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 fields, got {}", fields.len())));
        }
        from_parts(
            field(&fields, 0, "date")?,
            field(&fields, 1, "instrument_id")?.to_string(),
            parse_num(field(&fields, 2, "open_interest")?, "open_interest")?,
        )
    };
    let json = |text: &str| {
        let row: OiJsonRow = json_row(text)?;
        from_parts(&row.date, row.instrument_id, row.open_interest)
    };
    let report = generic_parse(reader, OPEN_INTEREST_HEADER, csv, json, |s| s.as_of_ns)?;

    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(report.records.len());
    let mut issues = report.issues;
    for s in report.records {
        if seen.insert((s.instrument_id.clone(), s.as_of_ns)) {
            records.push(s);
        } else {
            issues.push(RowIssue {
                line: 0,
                kind: RowIssueKind::InvariantViolation,
                message: format!(
                    "duplicate open interest for {} on {}",
                    s.instrument_id,
                    time::format_date(s.as_of_ns)
                ),
            });
        }
    }
    Ok(ParseReport { records, issues })
}

pub fn write_trades_csv(mut w: impl Write, trades: &[TradeTick]) -> std::io::Result<()> {
    writeln!(w, "{TRADES_HEADER}")?;
    for t in trades {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.ts_ns,
            t.instrument_id,
            t.price,
            t.size,
            t.venue.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

pub fn write_quotes_csv(mut w: impl Write, quotes: &[QuoteTick]) -> std::io::Result<()> {
    writeln!(w, "{QUOTES_HEADER}")?;
    for q in quotes {
        writeln!(w, "{},{},{},{}", q.ts_ns, q.instrument_id, q.bid, q.ask)?;
    }
    Ok(())
}

pub fn write_open_interest_csv(
    mut w: impl Write,
    snapshots: &[OpenInterestSnapshot],
) -> std::io::Result<()> {
    writeln!(w, "{OPEN_INTEREST_HEADER}")?;
    for s in snapshots {
        writeln!(
            w,
            "{},{},{}",
            time::format_date(s.as_of_ns),
            s.instrument_id,
            s.open_interest
        )?;
    }
    Ok(())
}
