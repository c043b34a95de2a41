//! Run manifest: the record a run leaves behind so that `verify` can
//! replay its claims from scratch.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    /// What the file is: trajectory-csv, control-csv, norms-csv,
    /// curve-csv, saturation-csv, field-csv, observability-csv,
    /// scaling-csv, summary-json, trajectory-bin.
    pub kind: String,
    /// Expected CSV data rows (header excluded), or payload bytes for
    /// binary artifacts; zero for JSON.
    pub rows: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationCount {
    pub what: String,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub task: String,
    pub seed: u64,
    /// Verbatim configuration the run was started with.
    pub config_text: String,
    pub artifacts: Vec<ArtifactEntry>,
    pub stage_seconds: Vec<StageTime>,
    pub iteration_counts: Vec<IterationCount>,
}
