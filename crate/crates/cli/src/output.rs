//! CSV and manifest writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Floats in CSV output carry 17 significant digits.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a CSV whose first lines are `#` comments with the config hash,
/// seed and any extra notes.
pub fn write_csv(
    path: &Path,
    config_hash: &str,
    seed: u64,
    notes: &[String],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# config_hash={config_hash}")?;
    writeln!(f, "# seed={seed}")?;
    for n in notes {
        writeln!(f, "# {n}")?;
    }
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header row and records of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub method: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub deterministic: bool,
    pub wall_clock_seconds: f64,
    pub training_seconds: Option<f64>,
    /// Mean seconds per evaluation (one surface for a network, one grid
    /// point for Monte Carlo).
    pub eval_seconds: Option<f64>,
    pub step_seconds: Vec<f64>,
    pub assumptions: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, method: Option<&str>, config_hash: &str, seed: u64, deterministic: bool) -> Self {
        Manifest {
            command: command.into(),
            method: method.map(str::to_string),
            config_hash: config_hash.into(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            deterministic,
            wall_clock_seconds: 0.0,
            training_seconds: None,
            eval_seconds: None,
            step_seconds: Vec::new(),
            assumptions: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn file_name(command: &str, method: Option<&str>) -> String {
        match method {
            Some(m) => format!("manifest_{command}_{m}.json"),
            None => format!("manifest_{command}.json"),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(Self::file_name(&self.command, self.method.as_deref()));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, -7.25] {
            let s = fmt_f(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            assert_eq!(s.split('e').next().unwrap().replace(['-', '.'], "").len(), 17);
        }
    }

    #[test]
    fn csv_round_trip_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, "abc", 7, &["note".into()], &["a", "b"], vec![vec!["1".into(), "2".into()]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash=abc\n# seed=7\n# note\na,b\n"));
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1", "2"]]);
    }
}
