//! Trainable classifiers: a random forest (primary) and multinomial
//! logistic regression (baseline), plus their binary model format.

mod forest;
mod format;
mod logistic;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{DecisionTree, ForestModel, ForestParams, TreeNode};
pub use format::{MODEL_MAGIC, MODEL_SCHEMA_VERSION};
pub use logistic::{softmax_objective, LogisticModel, LogisticParams};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, ClassifierError> {
        if rows.is_empty() {
            return Err(ClassifierError::EmptyData);
        }
        if rows.len() != labels.len() {
            return Err(ClassifierError::InvalidData(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        let mut x = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(ClassifierError::DimMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(ClassifierError::InvalidData(format!("row {i} has value {v}")));
            }
            x.extend_from_slice(r);
        }
        if let Some(l) = labels.iter().find(|l| **l >= class_count) {
            return Err(ClassifierError::InvalidData(format!(
                "label {l} outside [0, {class_count})"
            )));
        }
        Ok(Dataset {
            x,
            labels,
            dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim.max(1)).take(self.len())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            x,
            labels,
            dim: self.dim,
            class_count: self.class_count,
        }
    }
}

/// Predicted class with the probability the model assigns to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierParams {
    Forest(ForestParams),
    Logistic(LogisticParams),
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams::Forest(ForestParams::default())
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Logistic(LogisticModel),
}

impl Model {
    pub fn train(
        data: &Dataset,
        params: &ClassifierParams,
        seed: u64,
    ) -> Result<Model, ClassifierError> {
        Ok(match params {
            ClassifierParams::Forest(p) => Model::Forest(ForestModel::train(data, p, seed)?),
            ClassifierParams::Logistic(p) => Model::Logistic(LogisticModel::train(data, p)?),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Forest(m) => m.feature_dim(),
            Model::Logistic(m) => m.dim(),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Model::Forest(m) => m.class_count(),
            Model::Logistic(m) => m.class_count(),
        }
    }

    /// Per-class probabilities (vote fractions for a forest).
    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        match self {
            Model::Forest(m) => m.probabilities(features),
            Model::Logistic(m) => m.probabilities(features),
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction, ClassifierError> {
        match self {
            Model::Forest(m) => m.predict(features),
            Model::Logistic(m) => m.predict(features),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Model::Forest(m) => format::encode_forest(m),
            Model::Logistic(m) => format::encode_logistic(m),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, ClassifierError> {
        format::decode(bytes)
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ClassifierError> {
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, ClassifierError> {
    Model::from_bytes(&std::fs::read(path)?)
}
