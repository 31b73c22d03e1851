//! CSV tables, JSON documents, gnuplot scripts and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Version of the CSV column layouts, recorded in every manifest.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// One CSV cell. Reals are written with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(i64),
    Text(String),
    Flag(bool),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Real(v) => format_real(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => u8::from(*b).to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// `{:.16e}` gives 17 significant digits, enough to round-trip any f64.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem; the file is `<name>.csv`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.to_csv_bytes()?)?;
        Ok(path)
    }
}

/// A gnuplot script plotting columns of one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub table: String,
    pub x_column: usize,
    pub y_column: usize,
    pub err_column: Option<usize>,
    pub log_y: bool,
    pub title: String,
}

impl PlotSpec {
    pub fn script(&self) -> String {
        let mut s = String::new();
        s.push_str("set datafile separator ','\n");
        s.push_str("set key autotitle columnhead\n");
        s.push_str(&format!("set title '{}'\n", self.title));
        if self.log_y {
            s.push_str("set logscale y\n");
        }
        let using = match self.err_column {
            Some(e) => format!("{}:{}:{} with yerrorlines", self.x_column, self.y_column, e),
            None => format!("{}:{} with linespoints", self.x_column, self.y_column),
        };
        s.push_str(&format!("plot '{}.csv' using {using}\n", self.table));
        s
    }
}

/// Bookkeeping written to `manifest.json`; the only file with timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub library_version: String,
    pub csv_schema_version: u32,
    pub task: String,
    pub started: String,
    pub finished: String,
    pub replicas: usize,
    pub workers: usize,
    pub seed: u64,
    pub files: Vec<String>,
    pub task_summary: serde_json::Value,
    pub checks: BTreeMap<String, bool>,
    pub passed: bool,
}

pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_through_text() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            std::f64::consts::PI,
        ] {
            let s = format_real(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_real(1.0), "1.0000000000000000e0");
        assert_eq!(format_real(f64::NAN), "nan");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut t = Table::new("demo", &["x", "ok", "label"]);
        t.push(vec![0.5.into(), true.into(), "a,b".into()]);
        let text = String::from_utf8(t.to_csv_bytes().unwrap()).unwrap();
        assert_eq!(text, "x,ok,label\n5.0000000000000000e-1,1,\"a,b\"\n");
    }

    #[test]
    fn hash_is_hex_sha256() {
        let h = config_hash("abc");
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn plot_script_uses_error_bars() {
        let p = PlotSpec {
            table: "tail".into(),
            x_column: 1,
            y_column: 2,
            err_column: Some(3),
            log_y: true,
            title: "tail".into(),
        };
        let s = p.script();
        assert!(s.contains("plot 'tail.csv' using 1:2:3 with yerrorlines"));
        assert!(s.contains("set logscale y"));
    }
}
