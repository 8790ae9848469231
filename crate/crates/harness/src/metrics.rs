//! Run artifacts: `metrics.jsonl`, `summary.csv` and the effective config.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rahfl::federation::{ClientInfo, ExperimentConfig, Mode, RoundMetrics};
use serde::{Deserialize, Serialize};

use crate::config::effective_config_toml;
use crate::error::{HarnessError, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Keys every `metrics.jsonl` line carries.
pub const METRICS_KEYS: [&str; 9] = [
    "round",
    "acc_clean",
    "acc_corrupt",
    "loss_ce",
    "loss_jsd",
    "loss_supcon",
    "loss_dcl",
    "loss_col",
    "matrix_ones",
];

/// Identity of a run for the summary table.
#[derive(Clone, Copy, Debug)]
pub struct RunInfo<'a> {
    pub mode: Mode,
    pub seed: u64,
    pub clients: &'a [ClientInfo],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub seed: u64,
    /// Client index, or `avg` for the mean row.
    pub client_id: String,
    pub arch: String,
    pub acc_clean_final: f64,
    pub acc_corrupt_final: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Mean final clean and corrupted accuracy over clients.
pub fn final_averages(metrics: &[RoundMetrics]) -> Option<(f64, f64)> {
    metrics.last().map(|m| (mean(&m.acc_clean), mean(&m.acc_corrupt)))
}

/// Per-client rows for the final round plus an `avg` row; empty when no
/// round ran.
pub fn summary_rows(metrics: &[RoundMetrics], info: &RunInfo) -> Vec<SummaryRow> {
    let Some(last) = metrics.last() else {
        return Vec::new();
    };
    let mut rows: Vec<SummaryRow> = info
        .clients
        .iter()
        .map(|c| SummaryRow {
            mode: info.mode.name().to_string(),
            seed: info.seed,
            client_id: c.id.to_string(),
            arch: c.arch.clone(),
            acc_clean_final: last.acc_clean[c.id],
            acc_corrupt_final: last.acc_corrupt[c.id],
        })
        .collect();
    rows.push(SummaryRow {
        mode: info.mode.name().to_string(),
        seed: info.seed,
        client_id: "avg".into(),
        arch: String::new(),
        acc_clean_final: mean(&last.acc_clean),
        acc_corrupt_final: mean(&last.acc_corrupt),
    });
    rows
}

/// Writes `metrics.jsonl` (one line per round) and `summary.csv`.
pub fn emit_metrics(metrics: &[RoundMetrics], info: &RunInfo, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut jsonl = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);
    for m in metrics {
        serde_json::to_writer(&mut jsonl, m)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;

    let mut csv = csv::Writer::from_path(out_dir.join(SUMMARY_FILE))?;
    let rows = summary_rows(metrics, info);
    if rows.is_empty() {
        csv.write_record(["mode", "seed", "client_id", "arch", "acc_clean_final", "acc_corrupt_final"])?;
    }
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Persists the fully resolved config so the run can be reproduced from its
/// output directory alone.
pub fn write_effective_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(CONFIG_FILE);
    fs::write(&path, effective_config_toml(cfg)?)?;
    Ok(path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let file = File::open(path).map_err(|e| HarnessError::Metrics {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m = serde_json::from_str(&line).map_err(|e| HarnessError::Metrics {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(m);
    }
    Ok(out)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?)
}
