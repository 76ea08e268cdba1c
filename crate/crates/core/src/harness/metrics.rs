use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::{HarnessError, Result};
use crate::lowshot::SplitName;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config: String,
    pub split: SplitName,
    pub n_way: usize,
    pub k_shot: usize,
    pub accuracy: f64,
    pub ci95: f64,
    pub episodes: usize,
    pub flagged_queries: usize,
    pub seed: u64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub rows: Vec<MetricRow>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Io(e.to_string()))
    }
}

/// Writes `<stem>.json` (full report) and `<stem>.csv` (one row per
/// config × split × setting). Returns both paths.
pub fn write_metrics(report: &Report, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let json_path = stem.with_extension("json");
    let csv_path = stem.with_extension("csv");
    std::fs::write(&json_path, report.to_json()?)?;
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record(["config", "split", "n_way", "k_shot", "accuracy", "ci95", "episodes"])
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    for r in &report.rows {
        let split = match r.split {
            SplitName::Base => "base",
            SplitName::Val => "val",
            SplitName::Test => "test",
        };
        w.write_record([
            r.config.clone(),
            split.to_string(),
            r.n_way.to_string(),
            r.k_shot.to_string(),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.ci95),
            r.episodes.to_string(),
        ])
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok((json_path, csv_path))
}
