//! Run records, content-addressed persistence and CSV emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ais::{AisRun, BoundCurve, Direction};
use crate::error::{Error, Result};
use crate::models::DataTable;
use crate::path::AnnealingSchedule;
use crate::transitions::KernelSpec;

pub const SCHEMA_VERSION: u32 = 1;

pub fn toolkit_version() -> String {
    format!("bread-core {}", env!("CARGO_PKG_VERSION"))
}

/// Git-style object hash: SHA-256 of `"blob <len>\0"` followed by the bytes.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Fingerprint of a dataset, taken over its CSV rendering.
pub fn table_hash(table: &DataTable) -> String {
    git_blob_hash(table_to_csv(table).as_bytes())
}

pub fn table_to_csv(table: &DataTable) -> String {
    let mut out = table.columns.join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Everything needed to trace one AIS run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    /// Free-form role of the run, e.g. `forward/real/T=100`.
    pub label: String,
    pub model: String,
    pub direction: Direction,
    pub schedule: AnnealingSchedule,
    pub kernel: KernelSpec,
    pub chains: usize,
    pub seed: u64,
    /// Hash of the dataset the run conditioned on.
    pub input_hash: String,
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub final_log_weights: Vec<f64>,
    pub shared_initial_state: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
    pub toolkit_version: String,
}

impl RunRecord {
    pub fn from_run<S>(
        label: impl Into<String>,
        model: impl Into<String>,
        input_hash: impl Into<String>,
        run: &AisRun<S>,
        record_timings: bool,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            label: label.into(),
            model: model.into(),
            direction: run.direction,
            schedule: run.schedule.clone(),
            kernel: run.kernel,
            chains: run.chains(),
            seed: run.seed,
            input_hash: input_hash.into(),
            final_log_weights: run.final_log_weights(),
            shared_initial_state: run.shared_initial_state,
            wall_time_secs: record_timings.then_some(run.wall_time.as_secs_f64()),
            toolkit_version: toolkit_version(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        to_json_bytes(self)
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn record_path(store: &Path, id: &str) -> PathBuf {
    store.join(format!("{id}.json"))
}

/// Stores `record` under the hash of its serialized bytes and returns that
/// hash as its identifier.
pub fn persist_run(record: &RunRecord, store: &Path) -> Result<String> {
    let bytes = record.to_bytes()?;
    let id = git_blob_hash(&bytes);
    let path = record_path(store, &id);
    if !path.exists() {
        write_atomic(&path, &bytes)?;
    }
    Ok(id)
}

pub fn load_run(store: &Path, id: &str) -> Result<RunRecord> {
    let path = record_path(store, id);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let found = git_blob_hash(&bytes);
    if found != id {
        return Err(Error::Integrity {
            path,
            expected: id.to_string(),
            found,
        });
    }
    Ok(serde_json::from_slice(&bytes)?)
}

/// CSV of bound curves, one row per (T, direction), sorted by T.
pub fn curves_csv(curves: &[&BoundCurve]) -> String {
    let timed = curves
        .iter()
        .any(|c| c.points.iter().any(|p| p.wall_time_secs.is_some()));
    let mut rows: Vec<_> = curves.iter().flat_map(|c| c.points.iter()).collect();
    rows.sort_by_key(|p| (p.stages, p.direction == Direction::Reverse));
    let mut out = String::from(if timed {
        "T,direction,bound,wall_time_secs\n"
    } else {
        "T,direction,bound\n"
    });
    for p in rows {
        let dir = match p.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        };
        out.push_str(&format!("{},{},{}", p.stages, dir, p.bound));
        if timed {
            out.push(',');
            if let Some(t) = p.wall_time_secs {
                out.push_str(&t.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// CSV of per-chain final log weights, sorted by T and then chain index.
pub fn chain_weights_csv(runs: &[&RunRecord]) -> String {
    let mut rows: Vec<(usize, bool, usize, f64)> = runs
        .iter()
        .flat_map(|r| {
            let rev = r.direction == Direction::Reverse;
            r.final_log_weights
                .iter()
                .enumerate()
                .map(move |(k, &w)| (r.schedule.stages(), rev, k, w))
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1, r.2));
    let mut out = String::from("T,direction,chain,log_weight\n");
    for (t, rev, k, w) in rows {
        let dir = if rev { "reverse" } else { "forward" };
        out.push_str(&format!("{t},{dir},{k},{w}\n"));
    }
    out
}
