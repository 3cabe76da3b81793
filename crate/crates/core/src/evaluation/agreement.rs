//! Krippendorff's alpha via the coincidence matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Nominal,
    Interval,
}

impl DistanceMetric {
    fn delta_sq(self, a: f64, b: f64) -> f64 {
        match self {
            DistanceMetric::Nominal => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            DistanceMetric::Interval => (a - b) * (a - b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub alpha: f64,
    pub metric: DistanceMetric,
    /// Units with at least two ratings.
    pub pairable_units: usize,
    pub annotators: usize,
    /// Total pairable values.
    pub values: usize,
}

/// `ratings[unit][annotator]`, `None` where an annotator skipped the unit.
///
/// When every pairable value is identical there is no expected
/// disagreement and alpha is reported as 1.0.
pub fn krippendorff_alpha(
    ratings: &[Vec<Option<f64>>],
    metric: DistanceMetric,
) -> Result<AgreementReport, EvalError> {
    let annotators = ratings.iter().map(Vec::len).max().unwrap_or(0);
    // distinct values keyed by bit pattern (after normalizing -0.0)
    let key = |v: f64| (v + 0.0).to_bits();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    let mut values: Vec<f64> = Vec::new();
    let mut units: Vec<Vec<usize>> = Vec::new();
    for unit in ratings {
        let present: Vec<f64> = unit.iter().flatten().copied().collect();
        if present.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::InsufficientData("non-finite rating".into()));
        }
        if present.len() < 2 {
            continue;
        }
        units.push(
            present
                .iter()
                .map(|v| {
                    *index.entry(key(*v)).or_insert_with(|| {
                        values.push(*v);
                        values.len() - 1
                    })
                })
                .collect(),
        );
    }
    if units.len() < 2 {
        return Err(EvalError::InsufficientData(format!(
            "{} units with two or more ratings; need 2",
            units.len()
        )));
    }

    let k = values.len();
    let mut coincidence = vec![vec![0.0f64; k]; k];
    for unit in &units {
        let m = unit.len() as f64;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    coincidence[a][b] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for e in 0..k {
            let d = metric.delta_sq(values[c], values[e]);
            observed += coincidence[c][e] * d;
            expected += marginals[c] * marginals[e] * d;
        }
    }
    let alpha = if expected == 0.0 {
        1.0
    } else {
        1.0 - (n - 1.0) * observed / expected
    };
    Ok(AgreementReport {
        alpha,
        metric,
        pairable_units: units.len(),
        annotators,
        values: n.round() as usize,
    })
}
