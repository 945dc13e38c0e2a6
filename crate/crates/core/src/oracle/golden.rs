//! Golden-value files.
//!
//! A golden file pins a short vector of previously verified numbers next
//! to a hash of the configuration that produced them. A check fails when
//! the file is missing, the configuration hash differs, or any value
//! drifts past the tolerance (bit-for-bit when the tolerance is zero).
//! Files are only written when the MLP_PDE_REGEN_GOLDEN environment
//! variable is set, so refreshing a baseline is always an explicit act.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Set this environment variable (to anything non-empty) to let
/// [`check_or_regen`] rewrite golden files instead of checking them.
pub const REGEN_ENV: &str = "MLP_PDE_REGEN_GOLDEN";

/// On-disk content of one golden file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub label: String,
    pub config_hash: String,
    pub values: Vec<f64>,
}

/// What [`check_or_regen`] did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoldenStatus {
    Matched,
    Regenerated,
}

/// Hex SHA-256 of the serialized configuration; struct field order makes
/// the serialization canonical.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    let json = serde_json::to_string(config)
        .map_err(|e| Error::Output(format!("could not serialize golden config: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes (or overwrites) the golden file for `config` and `values`.
pub fn write_golden(
    path: &Path,
    label: &str,
    config: &impl Serialize,
    values: &[f64],
) -> Result<()> {
    let record = GoldenRecord {
        label: label.to_string(),
        config_hash: config_hash(config)?,
        values: values.to_vec(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Output(format!("could not serialize golden record: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Compares `values` against the golden file. `tol = 0.0` requires
/// bit-for-bit equality.
pub fn check_golden(
    path: &Path,
    label: &str,
    config: &impl Serialize,
    values: &[f64],
    tol: f64,
) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Output(format!(
            "golden file {} unreadable ({e}); run once with {REGEN_ENV}=1 to create it",
            path.display()
        ))
    })?;
    let record: GoldenRecord = serde_json::from_str(&text)
        .map_err(|e| Error::Output(format!("golden file {} is corrupt: {e}", path.display())))?;
    if record.label != label {
        return Err(Error::Output(format!(
            "golden file {} holds '{}', expected '{label}'",
            path.display(),
            record.label
        )));
    }
    let hash = config_hash(config)?;
    if record.config_hash != hash {
        return Err(Error::Output(format!(
            "golden file {} was produced by a different configuration; \
             rerun with {REGEN_ENV}=1 if the change is intentional",
            path.display()
        )));
    }
    if record.values.len() != values.len() {
        return Err(Error::Output(format!(
            "golden file {} has {} values, computed {}",
            path.display(),
            record.values.len(),
            values.len()
        )));
    }
    for (i, (&want, &got)) in record.values.iter().zip(values).enumerate() {
        let ok = if tol == 0.0 { want.to_bits() == got.to_bits() } else { (want - got).abs() <= tol };
        if !ok {
            return Err(Error::Output(format!(
                "golden value {i} of {} drifted: stored {want:?}, computed {got:?}",
                path.display()
            )));
        }
    }
    Ok(())
}

/// [`check_golden`], except that setting [`REGEN_ENV`] rewrites the file
/// instead.
pub fn check_or_regen(
    path: &Path,
    label: &str,
    config: &impl Serialize,
    values: &[f64],
    tol: f64,
) -> Result<GoldenStatus> {
    if std::env::var_os(REGEN_ENV).is_some_and(|v| !v.is_empty()) {
        write_golden(path, label, config, values)?;
        Ok(GoldenStatus::Regenerated)
    } else {
        check_golden(path, label, config, values, tol)?;
        Ok(GoldenStatus::Matched)
    }
}
