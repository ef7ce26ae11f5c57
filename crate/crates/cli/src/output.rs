//! CSV and JSON writers for run artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

/// Floats are written with 17 significant digits so files round-trip.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvWriter {
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, cells: &[String]) -> std::io::Result<()> {
        debug_assert_eq!(cells.len(), self.columns);
        writeln!(self.out, "{}", cells.join(","))
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    HypothesisViolation,
    NumericalFailure,
    InvalidInput,
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    status: Status,
    reason: Option<&'a str>,
    runtime_seconds: f64,
    config: &'a RunConfig,
    results: Value,
}

pub fn write_summary(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    status: Status,
    reason: Option<&str>,
    runtime_seconds: f64,
    results: Value,
) -> std::io::Result<PathBuf> {
    let path = dir.join("summary.json");
    let summary = Summary {
        command,
        status,
        reason,
        runtime_seconds,
        config,
        results,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [std::f64::consts::PI, -1e-300, 6.02214076e23, 0.1 + 0.2] {
            assert_eq!(fmt_f(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f(1.0), "1.0000000000000000e0");
    }
}
