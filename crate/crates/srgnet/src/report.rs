//! Run outputs: metrics JSON, training history CSV, the run manifest, and
//! wall-clock latency measurement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use srgnet_core::config::RunConfig;
use srgnet_core::eval::MiouReport;
use srgnet_core::train::{StopReason, TrainHistory};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub median: f64,
    pub mean: f64,
    pub repetitions: usize,
}

/// Times `op` `repetitions` times after one untimed warm-up call.
/// Milliseconds.
pub fn latency<F: FnMut()>(mut op: F, repetitions: usize) -> Result<Latency> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "latency needs at least 3 repetitions, got {repetitions}"
        )));
    }
    op();
    let mut times: Vec<f64> = (0..repetitions)
        .map(|_| {
            let t = Instant::now();
            op();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    let mean = times.iter().sum::<f64>() / repetitions as f64;
    times.sort_by(f64::total_cmp);
    let median = if repetitions % 2 == 1 {
        times[repetitions / 2]
    } else {
        0.5 * (times[repetitions / 2 - 1] + times[repetitions / 2])
    };
    Ok(Latency {
        median,
        mean,
        repetitions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartScore {
    pub part: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when no ground truth was given.
    pub miou: Option<f64>,
    pub per_part: Vec<PartScore>,
    /// `[predicted, ground truth]` pairs.
    pub matching: Vec<[usize; 2]>,
    /// Milliseconds per inference; `None` unless measured.
    pub latency_ms: Option<Latency>,
    pub n_points: usize,
    /// Distinct predicted labels.
    pub n_labels: usize,
    /// mIoU of the region-growing pre-segmentation, when it ran.
    pub srg_miou: Option<f64>,
    pub config: BTreeMap<String, String>,
}

impl Metrics {
    pub fn new(n_points: usize, n_labels: usize, config: &RunConfig) -> Self {
        Self {
            miou: None,
            per_part: Vec::new(),
            matching: Vec::new(),
            latency_ms: None,
            n_points,
            n_labels,
            srg_miou: None,
            config: config.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn with_score(mut self, report: &MiouReport) -> Self {
        self.miou = Some(report.miou);
        self.per_part = report
            .per_part
            .iter()
            .enumerate()
            .map(|(part, &iou)| PartScore { part, iou })
            .collect();
        self.matching = report.matching.iter().map(|&(p, g)| [p, g]).collect();
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// `iteration,loss,n_labels,agreement` with one row per executed
/// iteration.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from("iteration,loss,n_labels,agreement\n");
    for (i, r) in history.records.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", r.loss, r.n_labels, r.agreement);
    }
    s
}

pub fn stop_reason(stop: &StopReason) -> String {
    match stop {
        StopReason::Completed => "completed".into(),
        StopReason::Collapsed { iteration } => format!("collapsed at iteration {iteration}"),
    }
}

/// Provenance of one run. Holds no timestamps or absolute machine state so
/// that identical runs write identical manifests.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub inputs: Vec<(String, u64)>,
    pub outputs: Vec<String>,
    pub notes: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    /// Records an input file and its size in bytes.
    pub fn input(&mut self, path: &std::path::Path) -> Result<()> {
        let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        self.inputs.push((path.display().to_string(), len));
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.into(), value.to_string()));
    }

    pub fn render(&self, config: &RunConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "srgnet {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command {}", self.command);
        let _ = writeln!(s, "seed {}", config.rng_seed);
        for (path, len) in &self.inputs {
            let _ = writeln!(s, "input {path} {len} bytes");
        }
        for path in &self.outputs {
            let _ = writeln!(s, "output {path}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "note {k} {v}");
        }
        for (k, v) in config.entries() {
            let _ = writeln!(s, "config {k} = {v}");
        }
        s
    }
}
