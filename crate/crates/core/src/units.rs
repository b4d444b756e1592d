//! Time units and the annualization convention.
//!
//! Internal time is measured in years. A year has 250 trading days and a
//! trading day has 6.5 hours, so intraday lags convert through trading
//! time rather than calendar time.

use crate::error::{FgpError, Result};

pub const TRADING_DAYS_PER_YEAR: f64 = 250.0;
pub const TRADING_HOURS_PER_DAY: f64 = 6.5;
pub const SECONDS_PER_TRADING_DAY: f64 = TRADING_HOURS_PER_DAY * 3600.0;
pub const SECONDS_PER_YEAR: f64 = SECONDS_PER_TRADING_DAY * TRADING_DAYS_PER_YEAR;
pub const MINUTES_PER_YEAR: f64 = SECONDS_PER_YEAR / 60.0;

pub fn seconds_to_years(s: f64) -> f64 {
    s / SECONDS_PER_YEAR
}

pub fn minutes_to_years(m: f64) -> f64 {
    m / MINUTES_PER_YEAR
}

pub fn years_to_minutes(y: f64) -> f64 {
    y * MINUTES_PER_YEAR
}

pub fn days_to_years(d: f64) -> f64 {
    d / TRADING_DAYS_PER_YEAR
}

/// Parse a duration such as `"7.5min"`, `"90s"`, `"2d"`, `"6.5h"` or `"1y"`
/// into years. A bare number is rejected: every time input carries a unit.
pub fn parse_duration(field: &str, text: &str) -> Result<f64> {
    let t = text.trim();
    let split = t
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| FgpError::validation(field, format!("`{t}` has no time unit")))?;
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| FgpError::validation(field, format!("`{t}` is not a number with unit")))?;
    if !value.is_finite() {
        return Err(FgpError::validation(field, "duration must be finite"));
    }
    let years = match unit.trim() {
        "s" | "sec" => seconds_to_years(value),
        "min" | "m" => minutes_to_years(value),
        "h" => seconds_to_years(value * 3600.0),
        "d" => days_to_years(value),
        "y" | "yr" => value,
        other => {
            return Err(FgpError::validation(
                field,
                format!("unknown time unit `{other}` (use s, min, h, d, y)"),
            ))
        }
    };
    Ok(years)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_units() {
        assert_eq!(parse_duration("t", "1y").unwrap(), 1.0);
        assert!((parse_duration("t", "250d").unwrap() - 1.0).abs() < 1e-15);
        assert!((parse_duration("t", "6.5h").unwrap() - 1.0 / 250.0).abs() < 1e-15);
        let m = parse_duration("t", "1.5min").unwrap();
        assert!((years_to_minutes(m) - 1.5).abs() < 1e-12);
        assert!((parse_duration("t", "90s").unwrap() - m).abs() < 1e-18);
    }

    #[test]
    fn rejects_bare_numbers_and_unknown_units() {
        assert!(parse_duration("horizon", "1.0").is_err());
        assert!(parse_duration("horizon", "3 weeks").is_err());
        let err = parse_duration("horizon", "x").unwrap_err();
        assert!(err.to_string().contains("horizon"));
    }
}
