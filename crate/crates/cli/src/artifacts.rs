//! Artifact files exchanged between pipeline stages.
//!
//! Every JSON artifact embeds the master seed and the resolved-config
//! digest so any output can be traced to the run that produced it.
//! Serialization is deterministic: struct fields keep declaration order,
//! maps sort by key, and floats print in the shortest form that parses
//! back to the same value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bikecluster_core::analysis::{AnomalyFlag, ClusterSummary, ClusterWorkday, SeasonalReport};
use bikecluster_core::ingest::{DroppedColumn, JoinReport};
use bikecluster_core::preprocess::SelectionReport;
use bikecluster_core::validation::{Recommended, ValidationReport};

pub const CLEANING_REPORT: &str = "cleaning_report.json";
pub const DAILY_TABLE: &str = "daily_table.csv";
pub const CORRELATION: &str = "correlation.csv";
pub const FEATURE_SELECTION: &str = "feature_selection.json";
pub const STANDARDIZATION: &str = "standardization.json";
pub const FEATURE_MATRIX: &str = "feature_matrix.csv";
pub const VALIDATION_REPORT: &str = "validation_report.json";
pub const VALIDATION_CURVES: &str = "validation_curves.csv";
pub const CLUSTERING: &str = "clustering.json";
pub const ANALYSIS_REPORT: &str = "analysis_report.json";
pub const PLOT_SCATTER: &str = "plot_scatter.csv";
pub const PLOT_WORKDAY: &str = "plot_workday.csv";
pub const PLOT_SEASONS: &str = "plot_seasons.csv";
pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Everything the manifest may cover, in its listing order.
const MANIFEST_SCOPE: [&str; 13] = [
    ANALYSIS_REPORT,
    CLEANING_REPORT,
    CLUSTERING,
    CORRELATION,
    DAILY_TABLE,
    FEATURE_MATRIX,
    FEATURE_SELECTION,
    PLOT_SCATTER,
    PLOT_SEASONS,
    PLOT_WORKDAY,
    STANDARDIZATION,
    VALIDATION_CURVES,
    VALIDATION_REPORT,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleaningArtifact {
    pub seed: u64,
    pub config_digest: String,
    /// Days with at least one qualifying trip.
    pub trip_days: usize,
    /// Weather rows before any column or row filtering.
    pub weather_days: usize,
    pub dropped_columns: Vec<DroppedColumn>,
    pub excluded_columns: Vec<String>,
    pub rows_dropped_in_join: usize,
    pub join: JoinReport,
    /// Rows in the joined daily table.
    pub n_rows: usize,
    pub feature_names: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub seed: u64,
    pub config_digest: String,
    pub redundancy_threshold: f64,
    pub include_count: bool,
    pub groups: Vec<Vec<String>>,
    pub dropped: Vec<String>,
    pub retained: Vec<String>,
}

impl SelectionArtifact {
    pub fn new(
        seed: u64,
        digest: &str,
        threshold: f64,
        include_count: bool,
        report: SelectionReport,
    ) -> Self {
        SelectionArtifact {
            seed,
            config_digest: digest.to_string(),
            redundancy_threshold: threshold,
            include_count,
            groups: report.groups,
            dropped: report.dropped,
            retained: report.retained,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizationArtifact {
    pub seed: u64,
    pub config_digest: String,
    pub features: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationArtifact {
    pub seed: u64,
    pub config_digest: String,
    pub k_values: Vec<usize>,
    pub wss_curve: Vec<f64>,
    pub silhouette_curve: Vec<Option<f64>>,
    pub gap_curve: Vec<f64>,
    pub gap_se: Vec<f64>,
    pub bootstrap_count: usize,
    pub recommended: Recommended,
    pub warnings: Vec<String>,
}

impl ValidationArtifact {
    pub fn new(digest: &str, report: ValidationReport) -> Self {
        ValidationArtifact {
            seed: report.seed,
            config_digest: digest.to_string(),
            k_values: report.k_values,
            wss_curve: report.wss_curve,
            silhouette_curve: report.silhouette_curve,
            gap_curve: report.gap_curve,
            gap_se: report.gap_se,
            bootstrap_count: report.bootstrap_count,
            recommended: report.recommended,
            warnings: report.warnings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub date: NaiveDate,
    pub cluster: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringArtifact {
    pub seed: u64,
    pub config_digest: String,
    pub k: usize,
    pub total_wss: f64,
    pub per_cluster_wss: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Sub-seed of the restart that produced this result.
    pub seed_used: u64,
    pub restarts_discarded_for_empty_clusters: usize,
    pub feature_names: Vec<String>,
    pub centroids_standardized: Vec<Vec<f64>>,
    pub centroids_original_units: Vec<Vec<f64>>,
    pub assignments: Vec<AssignmentEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub seed: u64,
    pub config_digest: String,
    pub clusters: Vec<ClusterSummary>,
    pub seasons: SeasonalReport,
    pub workday: Vec<ClusterWorkday>,
    pub anomalies: Vec<AnomalyFlag>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_digest: String,
    pub artifacts: Vec<ManifestEntry>,
}

/// Write a JSON artifact: pretty-printed, trailing newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut bytes =
        serde_json::to_vec_pretty(value).with_context(|| format!("cannot serialize {name}"))?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

/// Read a JSON artifact written by an earlier stage; `produced_by` names
/// the subcommand to run when the file is missing.
pub fn read_json<T: DeserializeOwned>(dir: &Path, name: &str, produced_by: &str) -> Result<T> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).with_context(|| {
        format!(
            "cannot read {}: run the `{produced_by}` stage first",
            path.display()
        )
    })?;
    serde_json::from_slice(&bytes).with_context(|| format!("cannot parse {}", path.display()))
}

/// Open a CSV artifact from an earlier stage with the same hint.
pub fn open_artifact(dir: &Path, name: &str, produced_by: &str) -> Result<std::fs::File> {
    let path = dir.join(name);
    std::fs::File::open(&path).with_context(|| {
        format!(
            "cannot read {}: run the `{produced_by}` stage first",
            path.display()
        )
    })
}

/// Rewrite the manifest from whatever artifacts currently exist.
///
/// Called after every stage, so finishing the pipeline stage-by-stage
/// leaves exactly the manifest a full `run` writes.
pub fn write_manifest(dir: &Path, seed: u64, config_digest: &str) -> Result<()> {
    let mut artifacts = Vec::new();
    for name in MANIFEST_SCOPE {
        let path = dir.join(name);
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => {
                return Err(e).with_context(|| format!("cannot hash {}", path.display()))
            }
        };
        artifacts.push(ManifestEntry {
            file: name.to_string(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    write_json(
        dir,
        RUN_MANIFEST,
        &RunManifest {
            seed,
            config_digest: config_digest.to_string(),
            artifacts,
        },
    )?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
