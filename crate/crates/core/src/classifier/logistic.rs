use serde::{Deserialize, Serialize};

use super::{argmax, ClassifierError, Dataset, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-3,
        }
    }
}

/// Multinomial logistic regression on internally standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub(crate) params: LogisticParams,
    pub(crate) means: Vec<f64>,
    pub(crate) scales: Vec<f64>,
    /// `class_count` rows of `dim + 1` weights; the last column is the bias.
    pub(crate) weights: Vec<Vec<f64>>,
}

fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

fn logits(weights: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .map(|w| {
            let (bias, coef) = w.split_last().expect("bias column");
            coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
        })
        .collect()
}

/// Mean cross-entropy plus `l2 / 2 * ||W||^2` (bias excluded), and its
/// gradient with respect to `weights`. `rows` are taken as given, so pass
/// standardized features to match what training optimizes.
pub fn softmax_objective(
    weights: &[Vec<f64>],
    rows: &[Vec<f64>],
    labels: &[usize],
    l2: f64,
) -> (f64, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.len()]).collect();
    for (x, &y) in rows.iter().zip(labels) {
        let mut p = logits(weights, x);
        softmax(&mut p);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (c, g) in grad.iter_mut().enumerate() {
            let err = p[c] - if c == y { 1.0 } else { 0.0 };
            let (gb, gw) = g.split_last_mut().expect("bias column");
            for (gj, xj) in gw.iter_mut().zip(x) {
                *gj += err * xj;
            }
            *gb += err;
        }
    }
    loss /= n;
    for (g, w) in grad.iter_mut().zip(weights) {
        let d = w.len() - 1;
        for j in 0..=d {
            g[j] /= n;
            if j < d {
                g[j] += l2 * w[j];
                loss += 0.5 * l2 * w[j] * w[j];
            }
        }
    }
    (loss, grad)
}

impl LogisticModel {
    /// Full-batch gradient descent from zero weights.
    pub fn train(data: &Dataset, params: &LogisticParams) -> Result<LogisticModel, ClassifierError> {
        if data.is_empty() {
            return Err(ClassifierError::EmptyData);
        }
        let dim = data.dim();
        let n = data.len() as f64;
        let mut means = vec![0.0; dim];
        for row in data.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; dim];
        for row in data.rows() {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v - m).powi(2);
            }
        }
        for s in scales.iter_mut() {
            let sd = (*s / n).sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }

        let mut model = LogisticModel {
            params: *params,
            means,
            scales,
            weights: vec![vec![0.0; dim + 1]; data.class_count()],
        };
        let rows: Vec<Vec<f64>> = data.rows().map(|r| model.standardize(r)).collect();
        for _ in 0..params.epochs {
            let (_, grad) = softmax_objective(&model.weights, &rows, data.labels(), params.l2);
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                for (wj, gj) in w.iter_mut().zip(g) {
                    *wj -= params.learning_rate * gj;
                }
            }
        }
        if model.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(ClassifierError::InvalidData(
                "training diverged; lower the learning rate".into(),
            ));
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    pub fn params(&self) -> &LogisticParams {
        &self.params
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if features.len() != self.dim() {
            return Err(ClassifierError::DimMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        let mut p = logits(&self.weights, &self.standardize(features));
        softmax(&mut p);
        Ok(p)
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction, ClassifierError> {
        let p = self.probabilities(features)?;
        let class = argmax(&p);
        Ok(Prediction {
            class,
            confidence: p[class],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_model_is_uniform() {
        let data = Dataset::new(vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![0, 2], 3).unwrap();
        let params = LogisticParams {
            epochs: 0,
            ..Default::default()
        };
        let m = LogisticModel::train(&data, &params).unwrap();
        let p = m.predict(&[5.0, -1.0]).unwrap();
        assert_eq!(p.class, 0);
        assert!((p.confidence - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn learns_a_threshold() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let data = Dataset::new(rows, labels, 2).unwrap();
        let m = LogisticModel::train(&data, &LogisticParams::default()).unwrap();
        assert_eq!(m.predict(&[2.0]).unwrap().class, 0);
        assert_eq!(m.predict(&[37.0]).unwrap().class, 1);
    }

    #[test]
    fn constant_feature_does_not_blow_up() {
        let data = Dataset::new(vec![vec![3.0, 0.0], vec![3.0, 1.0]], vec![0, 1], 2).unwrap();
        let m = LogisticModel::train(&data, &LogisticParams::default()).unwrap();
        assert!(m.weights().iter().flatten().all(|w| w.is_finite()));
    }
}
