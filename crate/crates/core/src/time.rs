//! Timestamp conventions and civil-date conversion.
//!
//! All event times are UTC nanoseconds since the Unix epoch stored as `i64`
//! (fields carry an `_ns` suffix). Year fractions use the Julian-year
//! convention of 365.25 days.

pub const NANOS_PER_SEC: i64 = 1_000_000_000;
pub const NANOS_PER_DAY: i64 = 86_400 * NANOS_PER_SEC;
pub const NANOS_PER_YEAR: f64 = 365.25 * 86_400.0 * 1e9;

/// Year fraction between two instants.
pub fn years_between(from_ns: i64, to_ns: i64) -> f64 {
    (to_ns - from_ns) as f64 / NANOS_PER_YEAR
}

/// Days since 1970-01-01 for a proleptic-Gregorian civil date
/// (Howard Hinnant's `days_from_civil`).
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if month <= 2 { y + 1 } else { y }, month, day)
}

/// Parses `YYYY-MM-DD` to UTC-midnight nanoseconds.
pub fn parse_date_ns(text: &str) -> Option<i64> {
    let mut parts = text.split('-');
    let year: i64 = parts.next()?.parse().ok()?;
    let month: u32 = parts.next()?.parse().ok()?;
    let day: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    Some(days_from_civil(year, month, day) * NANOS_PER_DAY)
}

/// Formats UTC-midnight-of(`ts_ns`) as `YYYY-MM-DD`.
pub fn format_date(ts_ns: i64) -> String {
    let (y, m, d) = civil_from_days(ts_ns.div_euclid(NANOS_PER_DAY));
    format!("{y:04}-{m:02}-{d:02}")
}

/// UTC midnight at the start of the day containing `ts_ns`.
pub fn day_floor_ns(ts_ns: i64) -> i64 {
    ts_ns.div_euclid(NANOS_PER_DAY) * NANOS_PER_DAY
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_is_day_zero() {
        assert_eq!(days_from_civil(1970, 1, 1), 0);
        assert_eq!(civil_from_days(0), (1970, 1, 1));
    }

    #[test]
    fn civil_round_trip_across_leap_years() {
        for days in (-200_000..200_000).step_by(97) {
            let (y, m, d) = civil_from_days(days);
            assert_eq!(days_from_civil(y, m, d), days);
        }
    }

    #[test]
    fn date_parsing_round_trips() {
        let ns = parse_date_ns("2026-03-15").unwrap();
        assert_eq!(format_date(ns), "2026-03-15");
        assert_eq!(ns % NANOS_PER_DAY, 0);
        assert!(parse_date_ns("2026-13-01").is_none());
        assert!(parse_date_ns("garbage").is_none());
    }
}
