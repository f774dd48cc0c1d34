//! Confusion-matrix classification metrics.
//!
//! Conventions: rows of the confusion matrix are true classes, columns are
//! predictions. Any per-class metric whose denominator is zero is reported
//! as 0.0 and flagged undefined; macro averages are unweighted means over
//! all classes, undefined entries included as zero.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[t][p]` is how often true class `t` was predicted as `p`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_total(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }
}

pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if classes == 0 {
        return Err(Error::InvalidInput("need at least one class".into()));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let bad = t.max(p);
        if bad >= classes {
            return Err(Error::InvalidLabel {
                label: bad,
                classes,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the class was never predicted (empty column).
    pub precision_defined: bool,
    /// False when the class has no true rows (empty row).
    pub recall_defined: bool,
    /// False when precision + recall is zero.
    pub f1_defined: bool,
    /// Number of true rows of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<PerClassMetrics>,
}

/// Ratio with the zero-denominator convention: 0.0 and a "defined" flag.
fn safe_ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

/// Harmonic mean of precision and recall; 0.0 when both are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn report_from_confusion(cm: &ConfusionMatrix) -> MetricsReport {
    let classes = cm.classes();
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let diag = cm.counts[c][c];
        let (precision, precision_defined) = safe_ratio(diag, cm.col_total(c));
        let (recall, recall_defined) = safe_ratio(diag, cm.row_total(c));
        let f1_defined = precision + recall > 0.0;
        per_class.push(PerClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            precision_defined,
            recall_defined,
            f1_defined,
            support: cm.row_total(c),
        });
    }
    let total = cm.total();
    let correct: u64 = (0..classes).map(|c| cm.counts[c][c]).sum();
    let accuracy = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    let mean = |f: fn(&PerClassMetrics) -> f64| {
        per_class.iter().map(f).sum::<f64>() / classes as f64
    };
    MetricsReport {
        accuracy,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    }
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class index for every row of `x`.
pub fn predict(model: &Model, x: &ndarray::Array2<f64>) -> Result<Vec<usize>> {
    let probs = forward(model, x)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|row| argmax(row.as_slice().expect("row-major probs")))
        .collect())
}

/// Full evaluation of a model against a labelled dataset.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<MetricsReport> {
    if data.class_count > model.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} classes exceed the model's {} outputs",
            data.class_count,
            model.output_dim()
        )));
    }
    let y_pred = predict(model, &data.x)?;
    let cm = confusion_matrix(&data.y, &y_pred, model.output_dim())?;
    Ok(report_from_confusion(&cm))
}
