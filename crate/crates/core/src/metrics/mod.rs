//! Classification metrics on a 0-100 scale, run aggregation and the
//! relative-improvement statistic.

mod report;

use serde::{Deserialize, Serialize};

pub use report::{ComparisonTable, ReportRow};

use crate::error::{Error, Result};

/// Test-set metrics of a single run, each on a 0-100 scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub aa: f64,
    pub auc: f64,
    pub f1: f64,
    pub entropy: f64,
}

impl RunMetrics {
    /// Evaluates every metric for one set of predicted probabilities.
    pub fn evaluate(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        Ok(Self {
            aa: average_accuracy(probabilities, labels, threshold)?,
            auc: auc(probabilities, labels)?,
            f1: binary_f1(probabilities, labels, threshold)?,
            entropy: prediction_entropy(probabilities)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_scores(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        check_lengths(probabilities, labels)?;
        let mut cm = Self::default();
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Schema(format!("label {bad} is not binary")));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    (pos, labels.len() as u64 - pos)
}

fn require_both_classes(labels: &[u8], metric: &str) -> Result<()> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{metric} needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok(())
}

/// Balanced accuracy: `100 * (TPR + TNR) / 2` with predictions `p >= threshold`.
pub fn average_accuracy(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    let cm = ConfusionMatrix::from_scores(probabilities, labels, threshold)?;
    require_both_classes(labels, "average accuracy")?;
    let tpr = cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    let tnr = cm.tn as f64 / (cm.tn + cm.fp) as f64;
    Ok(100.0 * (tpr + tnr) / 2.0)
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted as
/// one half.
///
/// Counts are kept in integer half-units so the result is exactly
/// `100 * (2 * wins + ties) / (2 * P * N)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    require_both_classes(labels, "AUC")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("AUC of NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut half_units: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let neg_in_group = group.iter().filter(|&&k| labels[k] == 0).count() as u64;
        let pos_in_group = group.len() as u64 - neg_in_group;
        half_units += pos_in_group * (2 * negatives_below + neg_in_group);
        negatives_below += neg_in_group;
        i = j;
    }
    let (pos, neg) = class_counts(labels);
    Ok(100.0 * half_units as f64 / (2 * pos * neg) as f64)
}

/// F1 of the positive class; 0 when there are no true positives.
pub fn binary_f1(probabilities: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    let cm = ConfusionMatrix::from_scores(probabilities, labels, threshold)?;
    if cm.tp == 0 {
        return Ok(0.0);
    }
    // harmonic mean of precision and recall, 2TP / (2TP + FP + FN)
    Ok(100.0 * (2 * cm.tp) as f64 / (2 * cm.tp + cm.fp + cm.fn_) as f64)
}

/// Binary entropy in bits, with `0 * log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Mean binary entropy of the predicted probabilities, scaled so that
/// `p = 0.5` everywhere gives 100.
pub fn prediction_entropy(probabilities: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::UndefinedMetric("entropy of zero predictions".into()));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Numeric(format!("probability {p} outside [0, 1]")));
    }
    let total: f64 = probabilities.iter().map(|&p| binary_entropy(p)).sum();
    Ok(100.0 * total / probabilities.len() as f64)
}

/// `100 * (a - b) / b`.
pub fn relative_improvement(a: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative improvement against a zero baseline".into(),
        ));
    }
    Ok(100.0 * (a - b) / b)
}

/// Rounds halves away from negative infinity, e.g. 26.5 -> 27.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Arithmetic mean and sample standard deviation (divisor n - 1, zero for
    /// a single value).
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::UndefinedMetric("summary of zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { mean, std })
    }
}

/// Mean and sample std of each metric over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aa: Summary,
    pub auc: Summary,
    pub f1: Summary,
    pub entropy: Summary,
    pub runs: usize,
}

pub fn aggregate<'a>(runs: impl IntoIterator<Item = &'a RunMetrics>) -> Result<MetricsReport> {
    let runs: Vec<&RunMetrics> = runs.into_iter().collect();
    let column = |f: fn(&RunMetrics) -> f64| -> Result<Summary> {
        Summary::of(&runs.iter().map(|m| f(m)).collect::<Vec<_>>())
    };
    Ok(MetricsReport {
        aa: column(|m| m.aa)?,
        auc: column(|m| m.auc)?,
        f1: column(|m| m.f1)?,
        entropy: column(|m| m.entropy)?,
        runs: runs.len(),
    })
}
