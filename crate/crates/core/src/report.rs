//! JSON and CSV report emission.
//!
//! Floats are always written with 17 significant digits, key order is
//! fixed (declaration order for structs, sorted for JSON values), and the
//! only run-dependent field is `timestamp`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{FgpError, Result};

pub const SCHEMA_VERSION: &str = "fgplab.report/1";

/// Pretty formatter that prints every float as `{:.16e}`.
struct Fixed17<'a>(PrettyFormatter<'a>);

impl Formatter for Fixed17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize with fixed 17-significant-digit floats. Non-finite floats
/// become `null`.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| FgpError::Estimation(format!("report serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: &'static str,
    command: &'a str,
    timestamp: String,
    seed: Option<u64>,
    config: &'a serde_json::Value,
    result: &'a T,
}

fn now_rfc3339() -> String {
    let d = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .unwrap_or_default();
    DateTime::<Utc>::from_timestamp(d.as_secs() as i64, d.subsec_nanos())
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_default()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> FgpError {
    FgpError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Write `report.json` into `dir` and return its path.
pub fn write_report<T: Serialize>(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: &serde_json::Value,
    result: &T,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let text = to_json(&Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        timestamp: now_rfc3339(),
        seed,
        config,
        result,
    })?;
    let path = dir.join("report.json");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Write a numeric CSV with 17 significant digits per cell.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(FgpError::validation(
                "csv",
                format!("row has {} cells, header {}", row.len(), header.len()),
            ));
        }
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        x: f64,
        n: usize,
        bad: f64,
        list: Vec<f64>,
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json(&Sample {
            x: 0.1,
            n: 3,
            bad: f64::NAN,
            list: vec![1.0, -2.5e-8],
        })
        .unwrap();
        assert!(s.contains("\"x\": 1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"));
        assert!(s.contains("\"bad\": null"));
        assert!(s.contains("-2.4999999999999999e-8"), "{s}");
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
    }

    #[test]
    fn report_and_csv_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"seed": 1});
        let p = write_report(dir.path(), "demo", Some(1), &cfg, &vec![0.5]).unwrap();
        let text = fs::read_to_string(p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["result"][0].as_f64(), Some(0.5));
        assert!(text.lines().any(|l| l.trim_start().starts_with("\"timestamp\"")));
        let csv_path = dir.path().join("a.csv");
        write_csv(&csv_path, &["a", "b"], vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(fs::read_to_string(&csv_path).unwrap().lines().count(), 2);
        assert!(write_csv(&csv_path, &["a"], vec![vec![1.0, 2.0]]).is_err());
    }
}
