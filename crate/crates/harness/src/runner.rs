//! Running experiments and ablation grids to disk.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rahfl::federation::{run_experiment_with, ExperimentConfig, ExperimentResult};
use serde::{Deserialize, Serialize};

use crate::config::with_override;
use crate::error::{HarnessError, Result};
use crate::metrics::{emit_metrics, final_averages, write_effective_config, RunInfo};

/// Runs one experiment and writes its artifacts to `out_dir`.
pub fn execute(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult> {
    let started = Instant::now();
    log::info!("running {} (seed {}) into {}", cfg.mode, cfg.seed, out_dir.display());
    write_effective_config(cfg, out_dir)?;
    let result = run_experiment_with(cfg, |m| {
        let k = m.acc_clean.len().max(1) as f64;
        log::info!(
            "round {:>3}: clean {:.4} corrupt {:.4} matrix ones {}",
            m.round,
            m.acc_clean.iter().sum::<f64>() / k,
            m.acc_corrupt.iter().sum::<f64>() / k,
            m.matrix_ones
        );
    })?;
    let info = RunInfo {
        mode: cfg.mode,
        seed: cfg.seed,
        clients: &result.clients,
    };
    emit_metrics(&result.metrics, &info, out_dir)?;
    log::info!("finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(result)
}

/// One axis of an ablation grid: a config key and the values it takes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses `key=v1,v2;key2=v3,v4` into axes.
pub fn parse_grid(spec: &str) -> Result<Vec<GridAxis>> {
    let bad = |reason: &str| HarnessError::Grid {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let axes = spec
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|axis| {
            let (key, values) = axis.split_once('=').ok_or_else(|| bad("each axis must look like key=v1,v2"))?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if key.trim().is_empty() || values.is_empty() {
                return Err(bad("each axis needs a key and at least one value"));
            }
            Ok(GridAxis {
                key: key.trim().to_string(),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if axes.is_empty() {
        return Err(bad("grid is empty"));
    }
    Ok(axes)
}

/// Cartesian product of the axes applied to `base`, with a label per point.
pub fn expand_grid(base: &ExperimentConfig, axes: &[GridAxis]) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut points = vec![(Vec::<String>::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for (labels, cfg) in &points {
            for v in &axis.values {
                let mut labels = labels.clone();
                labels.push(format!("{}-{}", axis.key, v));
                next.push((labels, with_override(cfg, &axis.key, v)?));
            }
        }
        points = next;
    }
    Ok(points.into_iter().map(|(labels, cfg)| (labels.join("__"), cfg)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub mode: String,
    pub seed: u64,
    pub acc_clean_final: f64,
    pub acc_corrupt_final: f64,
}

pub const GRID_FILE: &str = "ablation.csv";

/// Runs every grid point into `out_root/<label>` and writes `ablation.csv`.
/// All points share the base seed, hence identical client datasets.
pub fn run_grid(base: &ExperimentConfig, axes: &[GridAxis], out_root: &Path) -> Result<Vec<(PathBuf, GridRow)>> {
    let points = expand_grid(base, axes)?;
    let mut rows = Vec::with_capacity(points.len());
    for (label, cfg) in points {
        let dir = out_root.join(&label);
        let result = execute(&cfg, &dir)?;
        let (clean, corrupt) = final_averages(&result.metrics).unwrap_or((f64::NAN, f64::NAN));
        rows.push((
            dir,
            GridRow {
                label,
                mode: cfg.mode.name().to_string(),
                seed: cfg.seed,
                acc_clean_final: clean,
                acc_corrupt_final: corrupt,
            },
        ));
    }
    std::fs::create_dir_all(out_root)?;
    let mut csv = csv::Writer::from_path(out_root.join(GRID_FILE))?;
    for (_, row) in &rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let axes = parse_grid("mode=local_only,rahfl; aug=on,off").unwrap();
        assert_eq!(axes.len(), 2);
        assert_eq!(axes[1].values, vec!["on", "off"]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("mode").is_err());
        assert!(parse_grid("mode=").is_err());
    }

    #[test]
    fn grid_expansion_is_cartesian() {
        let axes = parse_grid("mode=asym_hfl,rahfl;matrix_update_period=1,5").unwrap();
        let points = expand_grid(&ExperimentConfig::default(), &axes).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[1].0, "mode-asym_hfl__matrix_update_period-5");
        assert_eq!(points[1].1.matrix_update_period, 5);
        assert!(expand_grid(&ExperimentConfig::default(), &parse_grid("mode=bogus").unwrap()).is_err());
    }
}
