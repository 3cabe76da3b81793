use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion-matrix metrics. Averages are weighted by true-class support,
/// so classes absent from `y_true` do not contribute to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean recall over classes present in `y_true`.
    pub balanced_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Class count is inferred as one past the largest label seen.
pub fn compute_metrics(y_true: &[usize], y_pred: &[usize]) -> Result<MetricsReport, EvalError> {
    let classes = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    compute_metrics_with_classes(y_true, y_pred, classes)
}

pub fn compute_metrics_with_classes(
    y_true: &[usize],
    y_pred: &[usize],
    class_count: usize,
) -> Result<MetricsReport, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            predicted: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let class_count = y_true
        .iter()
        .chain(y_pred)
        .max()
        .map_or(class_count, |m| class_count.max(m + 1));

    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for (t, p) in y_true.iter().zip(y_pred) {
        confusion[*t][*p] += 1;
    }
    let n = y_true.len();
    let correct: usize = (0..class_count).map(|c| confusion[c][c]).sum();

    let mut per_class = Vec::with_capacity(class_count);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    let mut recall_sum = 0.0;
    let mut present = 0;
    for c in 0..class_count {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            let w = support as f64 / n as f64;
            wp += w * precision;
            wr += w * recall;
            wf += w * f1;
            recall_sum += recall;
            present += 1;
        }
        per_class.push(ClassMetrics {
            class: c,
            support,
            precision,
            recall,
            f1,
        });
    }

    Ok(MetricsReport {
        accuracy: ratio(correct, n),
        precision: wp,
        recall: wr,
        f1: wf,
        balanced_accuracy: recall_sum / present as f64,
        per_class,
        confusion,
    })
}
