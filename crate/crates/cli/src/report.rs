//! Report envelope and file writers. Reports carry no timestamps, so equal
//! inputs give equal bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_ID: &str = "fluxlaws-report/1";

#[derive(Clone, Debug, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Gate {
    /// Passes when `value ≤ tolerance` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 0.0 } else { 1.0 }, tolerance: 0.0, passed: ok }
    }
}

#[derive(Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub schema: &'static str,
    pub command: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: &'a C,
    pub gates: Vec<Gate>,
    pub passed: bool,
    pub result: R,
}

impl<'a, C: Serialize, R: Serialize> Report<'a, C, R> {
    pub fn new(command: &'static str, config: &'a C, seed: Option<u64>, gates: Vec<Gate>, result: R) -> Result<Self, CliError> {
        let passed = gates.iter().all(|g| g.passed);
        Ok(Self {
            schema: SCHEMA_ID,
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: config_hash(config)?,
            seed,
            threads: rayon::current_num_threads(),
            config,
            gates,
            passed,
            result,
        })
    }

    pub fn failures(&self) -> Vec<String> {
        self.gates.iter().filter(|g| !g.passed).map(|g| format!("{}: {} > {}", g.name, g.value, g.tolerance)).collect()
    }
}

/// SHA-256 of the compact JSON form of the resolved configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String, CliError> {
    let bytes = serde_json::to_vec(config).map_err(|e| CliError::Numeric(e.to_string()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// CSV with a header row; floats use the shortest round-trip form.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn csv_to_stdout(header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn f(v: f64) -> String {
    format!("{v:e}")
}
