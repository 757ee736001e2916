use std::io::Write;
use std::path::{Path, PathBuf};

use aflow_core::diagnostics::{DecayFit, DefectReport, RunRow};
use aflow_core::flow::{FlowState, RunStatus};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::config::ExperimentConfig;
use crate::{CliError, Result};

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Serialize(e.to_string()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}

/// SHA-256 of the state's density array in checkpoint byte order.
pub fn state_digest(state: &FlowState) -> String {
    let mut h = Sha256::new();
    for v in state.density.data() {
        h.update(v.re.to_le_bytes());
        h.update(v.im.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Git-style content hash: SHA-256 over `"aflow <len>\0"` followed by the
/// canonical config JSON, the conventions id and the initial state digest,
/// newline separated.
pub fn content_hash(config: &ExperimentConfig, conventions: &str, initial_digest: &str) -> String {
    let mut payload = config.canonical_json();
    payload.push(b'\n');
    payload.extend_from_slice(conventions.as_bytes());
    payload.push(b'\n');
    payload.extend_from_slice(initial_digest.as_bytes());
    let mut h = Sha256::new();
    h.update(format!("aflow {}\0", payload.len()).as_bytes());
    h.update(&payload);
    hex::encode(h.finalize())
}

pub const METRICS_COLUMNS: [&str; 9] = [
    "t", "energy", "balanced", "astheno", "kahler", "ricci", "margin", "dist_ck", "dt",
];

#[derive(Serialize)]
struct MetricsRecord {
    t: f64,
    energy: f64,
    balanced: f64,
    astheno: f64,
    kahler: f64,
    ricci: f64,
    margin: f64,
    dist_ck: f64,
    dt: f64,
}

/// Streams rows into a temporary file that becomes `metrics.csv` on
/// [`MetricsWriter::finish`]. Wall times are left out so that identical
/// runs give identical files.
pub struct MetricsWriter {
    target: PathBuf,
    writer: csv::Writer<NamedTempFile>,
}

impl MetricsWriter {
    pub fn create(target: &Path) -> Result<Self> {
        let dir = parent_of(target);
        let tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            writer: csv::Writer::from_writer(tmp),
        })
    }

    pub fn push(&mut self, row: &RunRow) -> Result<()> {
        let d = &row.defects;
        self.writer
            .serialize(MetricsRecord {
                t: row.t,
                energy: row.energy,
                balanced: d.balanced,
                astheno: d.astheno,
                kahler: d.kahler,
                ricci: d.ricci,
                margin: d.positivity_margin,
                dist_ck: d.dist_ck,
                dt: row.dt,
            })
            .map_err(|e| CliError::Serialize(e.to_string()))
    }

    pub fn finish(self) -> Result<()> {
        let tmp = self
            .writer
            .into_inner()
            .map_err(|e| CliError::Serialize(e.to_string()))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
        tmp.persist(&self.target).map_err(|e| CliError::io(&self.target, e.error))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub conventions: String,
    pub rng: String,
    pub initial_state_digest: String,
    pub hash: String,
    /// Flow status; absent for scenarios that do not integrate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_fit: Option<DecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_defects: Option<DefectReport>,
    /// Scenario-specific result, such as a gap report or suite reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
}
