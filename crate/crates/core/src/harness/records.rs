//! Result records and deterministic file output.
//!
//! One CSV row per measured scalar, in a single long-format schema shared
//! by every mode; cells a mode does not fill stay empty. All numeric
//! columns are byte-deterministic for a given (config, seed); wall_ms is
//! the only nondeterministic column and is kept last so comparisons can
//! strip it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;

/// Bumped whenever a column is added, removed, or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// One measured scalar with its labels and the work behind it.
///
/// Group quantities (ledger counters, predicted costs, wall time) repeat
/// on every row of the group that produced them, so each row stands
/// alone. `level`, `point`, and `nu` use -1 for "not applicable"; `grid`
/// uses 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub mode: String,
    pub problem: String,
    pub dim: u64,
    pub level: i64,
    pub grid: u64,
    pub point: i64,
    pub t: Option<f64>,
    pub nu: i64,
    pub metric: String,
    pub value: f64,
    pub std_err: Option<f64>,
    pub replications: u64,
    pub g_evals: u64,
    pub f_evals: u64,
    pub coeff_evals: u64,
    pub gaussian_draws: u64,
    pub uniform_draws: u64,
    pub euler_substeps: u64,
    pub theoretical_cost: Option<f64>,
    pub upper_bound: Option<f64>,
    pub wall_ms: u64,
}

impl ResultRecord {
    /// A row with labels and value set and everything group-level zeroed;
    /// [`stamp_group`] fills the rest.
    pub(crate) fn bare(
        config_hash: &str,
        mode: &str,
        problem: &str,
        dim: usize,
        metric: &str,
        value: f64,
    ) -> Self {
        ResultRecord {
            config_hash: config_hash.to_string(),
            mode: mode.to_string(),
            problem: problem.to_string(),
            dim: dim as u64,
            level: -1,
            grid: 0,
            point: -1,
            t: None,
            nu: -1,
            metric: metric.to_string(),
            value,
            std_err: None,
            replications: 0,
            g_evals: 0,
            f_evals: 0,
            coeff_evals: 0,
            gaussian_draws: 0,
            uniform_draws: 0,
            euler_substeps: 0,
            theoretical_cost: None,
            upper_bound: None,
            wall_ms: 0,
        }
    }
}

/// Stamps shared group quantities onto a slice of rows.
pub(crate) fn stamp_group(
    rows: &mut [ResultRecord],
    ledger: &CostLedger,
    theoretical: Option<f64>,
    upper: Option<f64>,
    wall_ms: u64,
) {
    for r in rows {
        r.g_evals = ledger.g_evals;
        r.f_evals = ledger.f_evals;
        r.coeff_evals = ledger.coeff_evals();
        r.gaussian_draws = ledger.gaussian_draws;
        r.uniform_draws = ledger.uniform_draws;
        r.euler_substeps = ledger.euler_substeps;
        r.theoretical_cost = theoretical;
        r.upper_bound = upper;
        r.wall_ms = wall_ms;
    }
}

/// Writes the records as RFC-4180 CSV (CRLF rows, header first).
pub fn write_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(|e| Error::Output(format!("could not open {}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Output(format!("could not write CSV row: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records back; used by tests and downstream tooling.
pub fn read_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Output(format!("could not open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row.map_err(|e| Error::Output(format!("could not parse CSV row: {e}")))?);
    }
    Ok(out)
}

/// Host fingerprint stored next to the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvFingerprint {
    pub package_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl EnvFingerprint {
    pub fn current(threads: usize) -> Self {
        EnvFingerprint {
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads,
        }
    }
}

/// Sidecar written as run.json: the full configuration (it round-trips to
/// an equal [`ExperimentConfig`]), its hash, and the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub csv_schema: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub environment: EnvFingerprint,
    pub records: usize,
    pub wall_ms: u64,
}

pub fn write_sidecar(path: &Path, sidecar: &RunSidecar) -> Result<()> {
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::Output(format!("could not serialize run sidecar: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrips_and_keeps_wall_ms_last() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let mut row = ResultRecord::bare("abc", "convergence", "heat-cosine", 2, "mean", 1.5);
        row.t = Some(0.25);
        row.std_err = Some(0.01);
        row.wall_ms = 12;
        write_csv(&path, &[row.clone()]).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\r\n"), "rows are not CRLF terminated");
        let header = text.lines().next().unwrap();
        assert!(header.ends_with(",wall_ms"), "wall_ms is not the last column: {header}");
        assert!(header.starts_with("config_hash,"));

        let back = read_csv(&path).unwrap();
        assert_eq!(back, vec![row]);
    }

    #[test]
    fn empty_cells_for_unset_options() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let row = ResultRecord::bare("abc", "em-rate", "heat-nlsigma", 1, "em_rms_x", 0.125);
        write_csv(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data_line = text.lines().nth(1).unwrap();
        assert!(data_line.contains(",,"), "expected empty cells in {data_line}");
    }
}
