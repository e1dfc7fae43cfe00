//! CSV reports.
//!
//! Reals carry 9 significant digits: fixed notation for decimal exponents in
//! `-5..=8`, scientific (`8.31341462e12`) otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a real with 9 significant digits.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0.00000000".into();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..=8).contains(&exp) {
        format!("{x:.*}", (8 - exp) as usize)
    } else {
        sci
    }
}

/// [`format_real`] without trailing zeros, for single values on a terminal.
pub fn format_real_short(x: f64) -> String {
    let s = format_real(x);
    match s.split_once('e') {
        Some((mantissa, exp)) => format!("{}e{exp}", trim_fraction(mantissa)),
        None => trim_fraction(&s).to_string(),
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i128),
    Real(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => format_real(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<u128> for Cell {
    fn from(v: u128) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// A header row plus data rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Config(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// RFC 4180 CSV with `\n` line endings.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
            w.write_record(&self.columns)?;
            for row in &self.rows {
                w.write_record(row.iter().map(Cell::render))?;
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).expect("writing to memory");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("cells are UTF-8")
    }
}

/// Provenance written at the top of every command report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub config: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// SHA-256 of the config file contents, if one was given.
    pub config_hash: Option<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self { subcommand: subcommand.into(), inputs: Vec::new(), config: None, output: None, seed, config_hash: None }
    }

    /// `#` comment lines: tool version, subcommand, seed and config hash.
    /// Paths are left out so reruns into another directory match byte for byte.
    pub fn header(&self) -> String {
        format!(
            "# tool: halfv {TOOL_VERSION}\n# command: {}\n# seed: {}\n# config: {}\n",
            self.subcommand,
            self.seed,
            self.config_hash.as_deref().map_or_else(|| "none".to_string(), |h| format!("sha256:{h}"))
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `table` as plain CSV.
pub fn write_report(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_csv()).map_err(|e| Error::io(path, e))
}

/// The manifest header followed by `table`.
pub fn render_with_header(manifest: &RunManifest, extra: &[String], table: &Table) -> String {
    let mut s = manifest.header();
    for line in extra {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(&table.to_csv());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_formatting() {
        assert_eq!(format_real(1.5), "1.50000000");
        assert_eq!(format_real(0.0), "0.00000000");
        assert_eq!(format_real(-0.0), "0.00000000");
        assert_eq!(format_real(123.456), "123.456000");
        assert_eq!(format_real(9.999999999), "10.0000000");
        assert_eq!(format_real(0.00012345678912), "0.000123456789");
        assert_eq!(format_real(1.23e-7), "1.23000000e-7");
        assert_eq!(format_real(8_313_414_615_040.0), "8.31341462e12");
        assert_eq!(format_real(123_456_789.0), "123456789");
        assert_eq!(format_real(f64::NAN), "NaN");
        assert_eq!(format_real_short(0.19999999998), "0.2");
        assert_eq!(format_real_short(-0.2), "-0.2");
        assert_eq!(format_real_short(8_313_414_615_040.0), "8.31341462e12");
        assert_eq!(format_real_short(2e20), "2e20");
    }

    #[test]
    fn csv_shapes() {
        let mut t = Table::new(&["layer", "entropy"]);
        assert_eq!(t.to_csv(), "layer,entropy\n");
        t.push(vec![0usize.into(), 1.5.into()]).unwrap();
        assert_eq!(t.to_csv(), "layer,entropy\n0,1.50000000\n");
        assert!(t.push(vec![1usize.into()]).is_err());
        for i in 1..1000usize {
            t.push(vec![i.into(), Cell::Empty]).unwrap();
        }
        assert_eq!(t.to_csv().lines().count(), 1001);
    }

    #[test]
    fn header_lists_hash_or_none() {
        let mut m = RunManifest::new("probe", 7);
        assert!(m.header().contains("# seed: 7\n# config: none\n"));
        m.config_hash = Some(sha256_hex(b"abc"));
        assert!(m.header().contains("sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"));
    }
}
