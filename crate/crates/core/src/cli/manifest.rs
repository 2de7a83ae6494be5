use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Record written next to the outputs of every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per stage, in execution order.
    pub stages: Vec<StageTime>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.stages.push(StageTime {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn stage_seconds(&self, stage: &str) -> f64 {
        self.stages.iter().filter(|s| s.stage == stage).map(|s| s.seconds).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.stages.iter().map(|s| s.seconds).sum()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub run: String,
    pub command: String,
    pub calibration: f64,
    pub total: f64,
}

/// Calibration-estimation and total wall-clock time per run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

/// One row per manifest, plus a summed `pipeline` row when there are several.
pub fn timing_report(manifests: &[(String, Manifest)]) -> TimingTable {
    let mut rows: Vec<TimingRow> = manifests
        .iter()
        .map(|(run, m)| TimingRow {
            run: run.clone(),
            command: m.command.clone(),
            calibration: m.stage_seconds("calibration"),
            total: m.total_seconds(),
        })
        .collect();
    if rows.len() > 1 {
        let calibration = rows.iter().map(|r| r.calibration).sum();
        let total = rows.iter().map(|r| r.total).sum();
        rows.push(TimingRow {
            run: "pipeline".into(),
            command: "-".into(),
            calibration,
            total,
        });
    }
    TimingTable { rows }
}

impl fmt::Display for TimingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
        writeln!(f, "{:<width$}  {:<10}  {:>14}  {:>10}", "run", "command", "calibration s", "total s")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:<10}  {:>14.3}  {:>10.3}", r.run, r.command, r.calibration, r.total)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(command: &str, stages: &[(&str, f64)]) -> Manifest {
        let mut m = Manifest::new(command, &RunConfig::default());
        m.stages = stages
            .iter()
            .map(|&(s, t)| StageTime { stage: s.into(), seconds: t })
            .collect();
        m
    }

    #[test]
    fn single_run_has_two_columns() {
        let t = timing_report(&[("a".into(), manifest("allocate", &[("allocation", 2.0)]))]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].calibration, 0.0);
        assert_eq!(t.rows[0].total, 2.0);
        let text = t.to_string();
        assert!(text.contains("calibration s") && text.contains("total s"));
    }

    #[test]
    fn calibration_only_total_equals_calibration() {
        let t = timing_report(&[("c".into(), manifest("calibrate", &[("calibration", 1.25)]))]);
        assert_eq!(t.rows[0].total, t.rows[0].calibration);
    }

    #[test]
    fn pipeline_row_sums_runs() {
        let t = timing_report(&[
            ("c".into(), manifest("calibrate", &[("calibration", 1.0)])),
            ("a".into(), manifest("allocate", &[("allocation", 2.5)])),
        ]);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[2].calibration, 1.0);
        assert_eq!(t.rows[2].total, 3.5);
    }
}
