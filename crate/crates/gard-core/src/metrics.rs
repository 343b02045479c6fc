//! Classification metrics from confusion matrices.

use serde::Serialize;

/// Per-class precision/recall/F1 with the zero convention: any metric whose
/// denominator is zero is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, per-class metrics, macro-F1, and the raw confusion counts
/// (rows: true class, columns: predicted class).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub macro_f1: f64,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Derive the standard metrics from a confusion matrix.
pub fn report_from_confusion(confusion: Vec<Vec<usize>>) -> MetricsReport {
    let c = confusion.len();
    let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let accuracy = safe_div(correct as f64, total as f64);
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = confusion[k][k] as f64;
        let fp: f64 = (0..c).filter(|&i| i != k).map(|i| confusion[i][k] as f64).sum();
        let fn_: f64 = (0..c).filter(|&j| j != k).map(|j| confusion[k][j] as f64).sum();
        let precision = safe_div(tp, tp + fp);
        let recall = safe_div(tp, tp + fn_);
        let f1 = safe_div(2.0 * precision * recall, precision + recall);
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
        });
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / c.max(1) as f64;
    MetricsReport {
        accuracy,
        per_class,
        confusion,
        macro_f1,
    }
}

impl MetricsReport {
    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().map(|row| row.iter().sum::<usize>()).sum()
    }
}
