//! Report envelopes and file output.
//!
//! Every JSON payload carries schema, crate version, the resolved
//! parameters (including the seed when one is used) and a timestamp;
//! with identical inputs the payload is byte-identical apart from the
//! timestamp field. CSV uses `.` decimal separators and 17 significant
//! digits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Envelope<P: Serialize, R: Serialize> {
    pub schema: u32,
    pub version: &'static str,
    pub command: &'static str,
    pub timestamp_unix: u64,
    pub params: P,
    pub result: R,
}

pub fn envelope<P: Serialize, R: Serialize>(
    command: &'static str,
    params: P,
    result: R,
) -> Envelope<P, R> {
    Envelope {
        schema: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION"),
        command,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        params,
        result,
    }
}

/// Pretty JSON to the given path, or stdout when none.
pub fn emit_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable reports");
    match output {
        Some(path) => {
            let mut f = File::create(path)?;
            writeln!(f, "{text}")?;
        }
        None => stdout_line(&text)?,
    }
    Ok(())
}

/// Line to stdout; a closed pipe (downstream `head`) ends output quietly.
pub fn stdout_line(line: &str) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => other.map_err(Into::into),
    }
}

/// Float formatting used in CSV output: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}
