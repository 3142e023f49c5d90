//! On-disk artifacts: metrics.csv, trajectory.csv, summary.json, sweep.csv.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use isacsim_core::engine::{Aggregate, SeedRun, Summary, SweepParam, SweepPoint};
use isacsim_core::{Estimator, SimConfig};
use serde::{Deserialize, Serialize};

/// Bumped whenever a column or JSON field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 7] =
    ["seed", "frame", "slot", "estimator", "throughput_bps_hz", "correlation", "pos_error_m"];

pub const TRAJECTORY_HEADER: [&str; 9] =
    ["seed", "frame", "true_x_m", "true_y_m", "est_x_m", "est_y_m", "est_speed_mps", "pos_error_m", "fusion_failed"];

pub const SWEEP_HEADER: [&str; 11] = [
    "param",
    "value",
    "estimator",
    "status",
    "throughput_mean",
    "throughput_ci95",
    "correlation_mean",
    "correlation_ci95",
    "pos_error_mean",
    "pos_error_ci95",
    "seeds",
];

/// Shortest text that parses back to the same double.
fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))
}

/// One row per (seed, frame, slot, estimator), in that order.
pub fn metrics_csv(runs: &[SeedRun]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for run in runs {
        for f in &run.frames {
            for s in &f.slots {
                w.write_record([
                    run.seed.to_string(),
                    f.frame.to_string(),
                    s.slot.to_string(),
                    s.estimator.to_string(),
                    num(s.throughput),
                    opt(s.correlation),
                    num(f.pos_error_m),
                ])?;
            }
        }
    }
    finish(w)
}

pub fn trajectory_csv(runs: &[SeedRun]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    for run in runs {
        for f in &run.frames {
            w.write_record([
                run.seed.to_string(),
                f.frame.to_string(),
                num(f.true_centroid[0]),
                num(f.true_centroid[1]),
                num(f.estimate[0]),
                num(f.estimate[1]),
                num(f.estimate[2]),
                num(f.pos_error_m),
                f.fusion_failed.to_string(),
            ])?;
        }
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub mean_throughput_bps_hz: f64,
    pub throughput_ci95: f64,
    pub mean_correlation: Option<f64>,
    pub correlation_ci95: Option<f64>,
}

/// Contents of summary.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub mean_pos_error: f64,
    pub pos_error_ci95: f64,
    pub estimators: BTreeMap<String, EstimatorStats>,
    pub frames_run: usize,
    pub fusion_failures: usize,
    pub seeds: Vec<u64>,
    /// Resolved configuration the run used.
    pub config: SimConfig,
}

fn finite(a: &Aggregate) -> Option<(f64, f64)> {
    (a.n > 0).then_some((a.mean, a.ci95))
}

impl SummaryFile {
    pub fn new(summary: &Summary, seeds: &[u64], config: &SimConfig) -> Self {
        let estimators = summary
            .estimators
            .iter()
            .map(|e| {
                let corr = finite(&e.correlation);
                (
                    e.estimator.to_string(),
                    EstimatorStats {
                        mean_throughput_bps_hz: e.throughput.mean,
                        throughput_ci95: e.throughput.ci95,
                        mean_correlation: corr.map(|c| c.0),
                        correlation_ci95: corr.map(|c| c.1),
                    },
                )
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            mean_pos_error: summary.pos_error.mean,
            pos_error_ci95: summary.pos_error.ci95,
            estimators,
            frames_run: summary.frames_run,
            fusion_failures: summary.fusion_failures,
            seeds: seeds.to_vec(),
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::ApCount => "aps",
        SweepParam::TxPower => "power",
    }
}

/// Rows per value and estimator; skipped values get a warning row per estimator.
pub fn sweep_csv(param: SweepParam, points: &[SweepPoint], estimators: &[Estimator]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    let mut estimators = estimators.to_vec();
    estimators.sort();
    estimators.dedup();
    for p in points {
        for &e in &estimators {
            let mut row = vec![param_name(param).to_string(), num(p.value), e.to_string()];
            match (&p.skipped, &p.summary) {
                (None, Some(s)) => {
                    let es = s.estimator(e).context("estimator missing from sweep summary")?;
                    let corr = finite(&es.correlation);
                    row.extend([
                        "ok".to_string(),
                        num(es.throughput.mean),
                        num(es.throughput.ci95),
                        opt(corr.map(|c| c.0)),
                        opt(corr.map(|c| c.1)),
                        num(s.pos_error.mean),
                        num(s.pos_error.ci95),
                        es.throughput.n.to_string(),
                    ]);
                }
                (why, _) => {
                    let why = why.clone().unwrap_or_else(|| "no result".into());
                    row.push(format!("skipped: {why}"));
                    row.extend(std::iter::repeat_n(String::new(), 7));
                }
            }
            w.write_record(&row)?;
        }
    }
    finish(w)
}

/// Files written into one output directory; all of them are removed if the
/// command fails before finishing.
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        self.written.push(path.clone());
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Registers a file produced by someone else, for rollback.
    pub fn adopt(&mut self, name: &str) -> PathBuf {
        let path = self.path(name);
        self.written.push(path.clone());
        path
    }

    pub fn rollback(self) {
        for p in &self.written {
            if p.exists() {
                if let Err(e) = fs::remove_file(p) {
                    log::warn!("could not remove partial output {}: {e}", p.display());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use isacsim_core::engine::{FrameMetrics, SlotRecord};

    fn run() -> SeedRun {
        let slot = |slot, estimator, correlation| SlotRecord {
            slot,
            estimator,
            throughput: 0.1 + 0.2,
            per_user: vec![],
            correlation,
            regularized: false,
        };
        SeedRun {
            seed: 4,
            frames: vec![FrameMetrics {
                frame: 0,
                true_centroid: [0.0, 50.0],
                estimate: [0.25, 50.5, 2.0],
                fusion_failed: false,
                pos_error_m: 1e-20,
                measurements: 40,
                slots: vec![slot(1, Estimator::Ls, Some(0.5)), slot(1, Estimator::Sensing, None)],
            }],
        }
    }

    #[test]
    fn metrics_rows_round_trip_precision() {
        let text = String::from_utf8(metrics_csv(&[run()]).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[..4], ["4", "0", "1", "ls"]);
        assert_eq!(row[4].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(row[6].parse::<f64>().unwrap(), 1e-20);
        assert!(!row[6].contains('e'));
        let last: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(last[5], "");
    }

    #[test]
    fn trajectory_has_one_row_per_frame() {
        let text = String::from_utf8(trajectory_csv(&[run()]).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().ends_with(",false"));
    }

    #[test]
    fn rollback_removes_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        let a = out.write("a.csv", b"x").unwrap();
        assert!(a.exists());
        out.rollback();
        assert!(!a.exists());
    }
}
