//! Accuracy, confusion matrices and per-run reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dbn::Architecture;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;

pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::precondition(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / actual.len() as f64)
}

/// `counts[actual][predicted]`.
pub fn confusion_matrix(predicted: &[usize], actual: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predicted.len() != actual.len() {
        return Err(Error::precondition("prediction and label counts differ"));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p >= n_classes || a >= n_classes {
            return Err(Error::precondition(format!(
                "class index outside [0, {n_classes})"
            )));
        }
        m[a][p] += 1;
    }
    Ok(m)
}

/// One training/evaluation run. Serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub arch: Architecture,
    pub model: String,
    pub pretrain_recon_errors: Vec<Vec<f64>>,
    pub finetune_losses: Vec<f64>,
    /// Absent until the run has been evaluated.
    pub test_accuracy: Option<f64>,
    pub pretrain_seconds: f64,
    pub finetune_seconds: f64,
    #[serde(default)]
    pub eval_seconds: f64,
    pub confusion: Option<Vec<Vec<u64>>>,
}

impl RunReport {
    pub fn new(run_id: impl Into<String>, seed: u64, fusion_mode: FusionMode, arch: Architecture) -> Self {
        RunReport {
            run_id: run_id.into(),
            seed,
            fusion_mode,
            arch,
            model: arch.model_name(fusion_mode),
            pretrain_recon_errors: Vec::new(),
            finetune_losses: Vec::new(),
            test_accuracy: None,
            pretrain_seconds: 0.0,
            finetune_seconds: 0.0,
            eval_seconds: 0.0,
            confusion: None,
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::data(format!("serializing report: {e}")))
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::data(format!("parsing report: {e}")))
    }
}

/// Mean and population standard deviation of test accuracy for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Percentages with two decimals, e.g. `45.00 ± 5.00`.
    pub fn formatted(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Aggregates evaluated runs of a single model.
pub fn aggregate_runs(reports: &[RunReport]) -> Result<Aggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::precondition("no runs to aggregate"))?;
    if reports
        .iter()
        .any(|r| r.arch != first.arch || r.fusion_mode != first.fusion_mode)
    {
        return Err(Error::precondition(
            "cannot aggregate runs of different architectures or fusion modes",
        ));
    }
    let mut accs = reports
        .iter()
        .map(|r| {
            r.test_accuracy
                .ok_or_else(|| Error::precondition(format!("run {} has not been evaluated", r.run_id)))
        })
        .collect::<Result<Vec<f64>>>()?;
    // Fixed summation order makes the result independent of report order.
    accs.sort_by(f64::total_cmp);
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok(Aggregate {
        model: first.model.clone(),
        runs: accs.len(),
        mean,
        std: var.sqrt(),
    })
}

/// Groups runs by (architecture, fusion mode) and aggregates each group.
/// Groups appear in the order their first run appears.
pub fn aggregate_by_model(reports: &[RunReport]) -> Result<Vec<Aggregate>> {
    let mut groups: Vec<((Architecture, FusionMode), Vec<RunReport>)> = Vec::new();
    for r in reports {
        let key = (r.arch, r.fusion_mode);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((key, vec![r.clone()])),
        }
    }
    groups.iter().map(|(_, g)| aggregate_runs(g)).collect()
}

/// Plain-text table: one row per model.
pub fn format_table(rows: &[Aggregate]) -> String {
    let width = rows.iter().map(|a| a.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>4}  accuracy (%)\n", "model", "runs");
    for a in rows {
        let _ = writeln!(out, "{:<width$}  {:>4}  {}", a.model, a.runs, a.formatted());
    }
    out
}
