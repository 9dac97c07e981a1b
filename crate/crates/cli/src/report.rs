//! Report persistence: canonical digests, the run manifest, and the
//! report.json / report.csv pair. Reports are byte-identical across reruns
//! with the same config and seed; only the manifest carries timestamps.

use crate::config::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// SHA-256 of the canonical (sorted-key, compact) JSON encoding.
pub fn canonical_digest(value: &serde_json::Value) -> String {
    // serde_json maps are BTreeMaps: serialization is already key-sorted
    let compact = serde_json::to_string(value).expect("json value serializes");
    let digest = Sha256::digest(compact.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub library_version: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(config: &serde_json::Value, seed: u64) -> Self {
        RunManifest {
            config_digest: canonical_digest(config),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            outputs: Vec::new(),
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// What a task hands back for persistence and exit-code decisions.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub report: serde_json::Value,
    /// Flat table, header included.
    pub csv: String,
    /// Condition ids with a fail verdict; non-empty means exit code 1.
    pub failed: Vec<String>,
    /// A single result line for stdout (e.g. the rate value).
    pub stdout_line: Option<String>,
}

/// Write report.json, report.csv, and manifest.json; returns the paths.
pub fn write_report(
    out_dir: &Path,
    output: &TaskOutput,
    mut manifest: RunManifest,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Output(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&output.report).expect("report serializes");
    std::fs::write(&report_path, json.as_bytes())
        .map_err(|e| CliError::Output(format!("{}: {e}", report_path.display())))?;
    written.push(report_path);
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, output.csv.as_bytes())
        .map_err(|e| CliError::Output(format!("{}: {e}", csv_path.display())))?;
    written.push(csv_path);
    manifest.finished_unix_ms = now_ms();
    manifest.outputs = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    manifest.outputs.push("manifest.json".into());
    let manifest_path = out_dir.join("manifest.json");
    let mjson = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, mjson.as_bytes())
        .map_err(|e| CliError::Output(format!("{}: {e}", manifest_path.display())))?;
    written.push(manifest_path);
    Ok(written)
}
