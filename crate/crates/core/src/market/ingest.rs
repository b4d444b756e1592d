use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{LogPath, PathOrigin, PathSet, TimeGrid};
use crate::error::{FgpError, Result};
use crate::units::seconds_to_years;

/// Load a price CSV (`time,<asset names...>`) into a single-path [`PathSet`].
///
/// Times are either seconds or ISO-8601 timestamps. Elapsed seconds are
/// converted to years in trading time. Rows must be equally spaced.
pub fn read_price_csv(path: &Path) -> Result<PathSet> {
    let file = std::fs::File::open(path).map_err(|e| FgpError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    read_price_csv_from(file)
}

pub fn read_price_csv_from<R: Read>(reader: R) -> Result<PathSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| FgpError::validation("csv", e.to_string()))?
        .clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("time") {
        return Err(FgpError::validation("csv", "header must be `time,<asset names...>`"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = names.len();

    let mut seconds = Vec::new();
    let mut values = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FgpError::validation("csv", e.to_string()))?;
        if record.len() != n + 1 {
            return Err(FgpError::validation(
                "csv",
                format!("row {} has {} fields", row + 1, record.len()),
            ));
        }
        seconds.push(parse_time(&record[0], row + 1)?);
        for (i, field) in record.iter().skip(1).enumerate() {
            let price: f64 = field
                .parse()
                .map_err(|_| FgpError::validation("csv", format!("row {}: `{field}` is not a price", row + 1)))?;
            if !(price > 0.0 && price.is_finite()) {
                return Err(FgpError::validation(
                    "csv",
                    format!("row {}: price of `{}` must be strictly positive", row + 1, names[i]),
                ));
            }
            values.push(price.ln());
        }
    }
    if seconds.len() < 2 {
        return Err(FgpError::validation("csv", "need at least two rows"));
    }
    let steps = seconds.len() - 1;
    let span = seconds[steps] - seconds[0];
    if !(span > 0.0) {
        return Err(FgpError::validation("csv", "times must be increasing"));
    }
    let step = span / steps as f64;
    for (m, w) in seconds.windows(2).enumerate() {
        let d = w[1] - w[0];
        if (d - step).abs() > 1e-6 * step.max(1.0) {
            return Err(FgpError::validation(
                "csv",
                format!(
                    "rows {} and {} are not on a uniform grid ({d} s vs {step} s)",
                    m + 1,
                    m + 2
                ),
            ));
        }
    }
    Ok(PathSet {
        grid: TimeGrid::new(seconds_to_years(span), steps)?,
        paths: vec![LogPath::from_rows(n, values)?],
        seed: 0,
        origin: PathOrigin::Ingested,
        names,
    })
}

fn parse_time(text: &str, row: usize) -> Result<f64> {
    if let Ok(s) = text.parse::<f64>() {
        return Ok(s);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            let utc = dt.and_utc();
            return Ok(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    Err(FgpError::validation(
        "csv",
        format!("row {row}: cannot parse time `{text}`"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_seconds_and_converts_to_logs() {
        let data = "time,A,B\n0,100,50\n90,101,49\n180,102,48\n";
        let ps = read_price_csv_from(data.as_bytes()).unwrap();
        assert_eq!(ps.names, vec!["A", "B"]);
        assert_eq!(ps.origin, PathOrigin::Ingested);
        assert_eq!(ps.grid.steps(), 2);
        assert!((ps.paths[0].row(0)[0] - 100f64.ln()).abs() < 1e-15);
        assert!((crate::units::years_to_minutes(ps.grid.dt()) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn reads_iso_timestamps() {
        let data = "time,A\n2005-01-03T09:30:00Z,10\n2005-01-03T09:31:30Z,11\n2005-01-03T09:33:00Z,12\n";
        let ps = read_price_csv_from(data.as_bytes()).unwrap();
        assert_eq!(ps.grid.steps(), 2);
        let data = "time,A\n2005-01-03 09:30:00,10\n2005-01-03 09:31:30,11\n";
        assert!(read_price_csv_from(data.as_bytes()).is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_price_csv_from("t,A\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(read_price_csv_from("time,A\n0,1\n1,-2\n".as_bytes()).is_err());
        assert!(read_price_csv_from("time,A\n0,1\n".as_bytes()).is_err());
        assert!(read_price_csv_from("time,A\n0,1\n1,2\n3,2\n".as_bytes()).is_err());
        assert!(read_price_csv_from("time,A\nnoon,1\n1,2\n".as_bytes()).is_err());
    }
}
