//! Evaluation metrics and report files.
//!
//! `metrics.csv` has the header `epoch,split,loss,metric` and one row per
//! evaluated split and epoch. `summary.json` holds the final evaluation.
//! Neither file records wall time, so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use dgn_core::Matrix;

use crate::config::{Task, TrainingMode};
use crate::error::Result;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax class of every logit row.
pub fn predictions(logits: &Matrix) -> Vec<usize> {
    logits.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
}

/// `counts[target][predicted]`.
pub fn confusion_matrix(predicted: &[usize], targets: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in predicted.iter().zip(targets) {
        counts[t][p] += 1;
    }
    counts
}

/// Fraction of rows whose argmax equals the target; 0 for no rows.
pub fn accuracy(logits: &Matrix, targets: &[usize]) -> f64 {
    let correct = predictions(logits).iter().zip(targets).filter(|(p, t)| p == t).count();
    correct as f64 / targets.len().max(1) as f64
}

/// Mean absolute error over all entries.
pub fn mae(pred: &Matrix, target: &Matrix) -> f64 {
    let total: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    total / pred.len().max(1) as f64
}

/// Fraction of logits whose sign agrees with the binary labels (probability threshold 0.5).
pub fn threshold_accuracy(logits: &[f64], labels: &[bool]) -> f64 {
    let correct = logits.iter().zip(labels).filter(|(z, y)| (**z > 0.0) == **y).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Loss and task metric (accuracy or MAE) of one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub task: Task,
    pub training: TrainingMode,
    /// `accuracy` or `mae`.
    pub metric: String,
    pub seed: u64,
    pub epochs: usize,
    pub stages: usize,
    pub num_parameters: usize,
    #[serde(rename = "final")]
    pub final_eval: BTreeMap<String, Evaluation>,
    /// Applications performed by each recurrent layer in the last training step.
    pub recurrent_iterations: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Metrics {
    pub rows: Vec<MetricRow>,
    pub summary: Summary,
    /// Seconds spent; reported on stderr only.
    pub wall_time: f64,
}

pub fn metric_name(task: Task) -> &'static str {
    if task == Task::GraphRegression {
        "mae"
    } else {
        "accuracy"
    }
}

pub fn csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("epoch,split,loss,metric\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.split, r.loss, r.metric).expect("write to string");
    }
    out
}

impl Metrics {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), csv(&self.rows))?;
        let mut json = serde_json::to_string_pretty(&self.summary).map_err(std::io::Error::other)?;
        json.push('\n');
        std::fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}
