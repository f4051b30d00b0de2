//! Confusion matrix and macro-averaged classification metrics.
//!
//! Rows are true classes, columns predicted ones. Undefined ratios (`0/0`)
//! count as 0, so a class that never occurs and is never predicted scores
//! 0 precision and 0 recall. Macro F1 is the mean of per-class F1 values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("metrics: {0}")]
pub struct MetricsError(String);

pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(MetricsError(format!("class index ({t}, {p}) outside {num_classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

pub fn per_class_prf(confusion: &[Vec<u64>]) -> ClassScores {
    let n = confusion.len();
    let mut s = ClassScores {
        precision: vec![0.0; n],
        recall: vec![0.0; n],
        f1: vec![0.0; n],
    };
    for k in 0..n {
        let tp = confusion[k][k] as f64;
        let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
        let actual: u64 = confusion[k].iter().sum();
        let (p, r) = (ratio(tp, predicted as f64), ratio(tp, actual as f64));
        s.precision[k] = p;
        s.recall[k] = r;
        s.f1[k] = ratio(2.0 * p * r, p + r);
    }
    s
}

fn mean(v: &[f64]) -> f64 {
    ratio(v.iter().sum(), v.len() as f64)
}

/// `(macro precision, macro recall, macro F1)`.
pub fn macro_prf(confusion: &[Vec<u64>]) -> (f64, f64, f64) {
    let s = per_class_prf(confusion);
    (mean(&s.precision), mean(&s.recall), mean(&s.f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub top1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: ClassScores,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..confusion.len()).map(|k| confusion[k][k]).sum();
        let (p, r, f1) = macro_prf(&confusion);
        Self {
            top1: ratio(trace as f64, total as f64),
            macro_precision: p,
            macro_recall: r,
            macro_f1: f1,
            per_class: per_class_prf(&confusion),
            confusion,
        }
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self, MetricsError> {
        Ok(Self::from_confusion(confusion_matrix(truth, pred, num_classes)?))
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Confusion grid as CSV with a header row and a leading true-class
    /// column.
    pub fn confusion_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\pred");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
