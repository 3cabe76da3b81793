//! Early fusion of keystroke/content features with text-emotion features,
//! and the nine-model suite trained on them.
//!
//! Every suite holds one model per [`Target`]: three-class valence and
//! arousal, then a one-vs-rest binary per category in canonical order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierParams, Dataset, Model};
use crate::features::{feature_names, FeatureRow, FEATURE_DIM};
use crate::model::{
    EmotionAnnotation, EmotionCategory, EmotionPrediction, LabelSet, Level, PredictionSource,
    ScoredLabel, ScoredLevel,
};
use crate::seed::derive_seed;
use crate::text::TextEmotion;

pub const TEXT_DIM: usize = 10;
pub const FUSED_DIM: usize = FEATURE_DIM + TEXT_DIM;
pub const SUITE_SCHEMA_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

pub const TEXT_FEATURE_NAMES: [&str; TEXT_DIM] = [
    "text_valence",
    "text_arousal",
    "text_neutral",
    "text_happiness",
    "text_sadness",
    "text_disgust",
    "text_fear",
    "text_surprise",
    "text_anger",
    "text_confidence",
];

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("message {0} has no gold annotation")]
    MissingLabels(String),
    #[error("input dimension mismatch: suite expects {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad suite manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 43 values: the 33 feature-row columns followed by the 10 text columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRow {
    pub values: Vec<f64>,
}

pub fn text_features(te: &TextEmotion) -> [f64; TEXT_DIM] {
    let mut out = [0.0; TEXT_DIM];
    out[0] = te.valence.value() as f64;
    out[1] = te.arousal.value() as f64;
    out[2..9].copy_from_slice(&te.labels.indicators());
    out[9] = te.confidence;
    out
}

pub fn build_fused_row(row: &FeatureRow, te: &TextEmotion) -> FusedRow {
    let mut values = if row.kd_valid {
        row.to_vec()
    } else {
        vec![0.0; FEATURE_DIM]
    };
    values.extend_from_slice(&text_features(te));
    FusedRow { values }
}

/// Column names of the fused row, in order.
pub fn fused_feature_names() -> Vec<&'static str> {
    let mut names = feature_names();
    names.extend(TEXT_FEATURE_NAMES);
    names
}

/// SHA-256 over the fused column names; stamped into suite manifests.
pub fn feature_dictionary_hash() -> String {
    hex::encode(Sha256::digest(fused_feature_names().join("\n").as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Kd,
    Text,
    Fusion,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Kd, Mode::Text, Mode::Fusion];

    pub fn dim(self) -> usize {
        match self {
            Mode::Kd => FEATURE_DIM,
            Mode::Text => TEXT_DIM,
            Mode::Fusion => FUSED_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Kd => "kd",
            Mode::Text => "text",
            Mode::Fusion => "fusion",
        }
    }

    pub fn source(self) -> PredictionSource {
        match self {
            Mode::Kd => PredictionSource::Kd,
            Mode::Text => PredictionSource::Text,
            Mode::Fusion => PredictionSource::Fusion,
        }
    }

    /// The slice of the fused representation a suite of this mode consumes.
    pub fn project(self, row: &FeatureRow, te: &TextEmotion) -> Vec<f64> {
        let fused = build_fused_row(row, te).values;
        match self {
            Mode::Kd => fused[..FEATURE_DIM].to_vec(),
            Mode::Text => fused[FEATURE_DIM..].to_vec(),
            Mode::Fusion => fused,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected kd, text or fusion)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Valence,
    Arousal,
    Category(EmotionCategory),
}

impl Target {
    /// Report column order: Valence, Arousal, then the categories.
    pub const ALL: [Target; 9] = [
        Target::Valence,
        Target::Arousal,
        Target::Category(EmotionCategory::Neutral),
        Target::Category(EmotionCategory::Happiness),
        Target::Category(EmotionCategory::Sadness),
        Target::Category(EmotionCategory::Disgust),
        Target::Category(EmotionCategory::Fear),
        Target::Category(EmotionCategory::Surprise),
        Target::Category(EmotionCategory::Anger),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Valence => "valence",
            Target::Arousal => "arousal",
            Target::Category(c) => c.name(),
        }
    }

    pub fn title(self) -> String {
        let n = self.name();
        n[..1].to_uppercase() + &n[1..]
    }

    pub fn class_count(self) -> usize {
        match self {
            Target::Valence | Target::Arousal => 3,
            Target::Category(_) => 2,
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Target::Category(_))
    }

    pub fn gold_class(self, gold: &EmotionAnnotation) -> usize {
        match self {
            Target::Valence => gold.valence.class_index(),
            Target::Arousal => gold.arousal.class_index(),
            Target::Category(c) => usize::from(gold.labels.contains(c)),
        }
    }
}

/// One corpus message ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub features: FeatureRow,
    pub text: TextEmotion,
    pub gold: Option<EmotionAnnotation>,
}

impl LabeledRow {
    pub fn input(&self, mode: Mode) -> Vec<f64> {
        mode.project(&self.features, &self.text)
    }

    fn gold(&self) -> Result<&EmotionAnnotation, FusionError> {
        self.gold
            .as_ref()
            .filter(|g| !g.labels.is_empty())
            .ok_or_else(|| FusionError::MissingLabels(self.features.message_id.clone()))
    }
}

/// Builds the training set for one target.
pub fn target_dataset(
    rows: &[LabeledRow],
    mode: Mode,
    target: Target,
) -> Result<Dataset, FusionError> {
    if rows.is_empty() {
        return Err(FusionError::EmptyCorpus);
    }
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in rows {
        y.push(target.gold_class(r.gold()?));
        x.push(r.input(mode));
    }
    Ok(Dataset::new(x, y, target.class_count())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSuite {
    pub mode: Mode,
    pub seed: u64,
    pub params: ClassifierParams,
    /// One model per entry of [`Target::ALL`], same order.
    pub models: Vec<Model>,
}

pub fn train_suite(
    rows: &[LabeledRow],
    mode: Mode,
    params: &ClassifierParams,
    seed: u64,
) -> Result<ModelSuite, FusionError> {
    let mut models = Vec::with_capacity(Target::ALL.len());
    for (i, target) in Target::ALL.into_iter().enumerate() {
        let data = target_dataset(rows, mode, target)?;
        models.push(Model::train(&data, params, derive_seed(seed, i as u64))?);
    }
    Ok(ModelSuite {
        mode,
        seed,
        params: *params,
        models,
    })
}

impl ModelSuite {
    pub fn model(&self, target: Target) -> &Model {
        let i = Target::ALL.iter().position(|t| *t == target).expect("known target");
        &self.models[i]
    }

    /// Class predicted for each target, in [`Target::ALL`] order.
    pub fn predict_classes(&self, input: &[f64]) -> Result<Vec<usize>, FusionError> {
        self.check_dim(input)?;
        self.models
            .iter()
            .map(|m| Ok(m.predict(input)?.class))
            .collect()
    }

    fn check_dim(&self, input: &[f64]) -> Result<(), FusionError> {
        if input.len() != self.mode.dim() {
            return Err(FusionError::DimMismatch {
                expected: self.mode.dim(),
                got: input.len(),
            });
        }
        Ok(())
    }
}

/// Picks up to three categories whose positive-class probability exceeds
/// 0.5, highest first; if none does, the single most probable category.
pub fn select_labels(positive: &[(EmotionCategory, f64)]) -> Vec<ScoredLabel> {
    let mut ranked: Vec<ScoredLabel> = positive
        .iter()
        .map(|(label, confidence)| ScoredLabel {
            label: *label,
            confidence: *confidence,
        })
        .collect();
    // stable sort keeps canonical order among equal confidences
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let above: Vec<ScoredLabel> = ranked
        .iter()
        .copied()
        .filter(|l| l.confidence > 0.5)
        .take(LabelSet::MAX)
        .collect();
    if above.is_empty() {
        ranked.into_iter().take(1).collect()
    } else {
        above
    }
}

pub fn predict_message(
    suite: &ModelSuite,
    message_id: &str,
    input: &[f64],
) -> Result<EmotionPrediction, FusionError> {
    suite.check_dim(input)?;
    let level = |model: &Model| -> Result<ScoredLevel, FusionError> {
        let p = model.predict(input)?;
        Ok(ScoredLevel {
            value: Level::from_class_index(p.class),
            confidence: p.confidence,
        })
    };
    let valence = level(&suite.models[0])?;
    let arousal = level(&suite.models[1])?;
    let positive = EmotionCategory::ALL
        .into_iter()
        .zip(&suite.models[2..])
        .map(|(c, m)| Ok((c, m.probabilities(input)?[1])))
        .collect::<Result<Vec<_>, FusionError>>()?;
    Ok(EmotionPrediction {
        message_id: message_id.to_string(),
        valence,
        arousal,
        labels: select_labels(&positive),
        source: suite.mode.source(),
        degraded: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub schema_version: u32,
    pub mode: Mode,
    pub input_dim: usize,
    pub seed: u64,
    pub classifier: ClassifierParams,
    pub feature_dictionary_hash: String,
    pub targets: Vec<ManifestTarget>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTarget {
    pub target: String,
    pub classes: usize,
    pub file: String,
}

pub fn save_suite(suite: &ModelSuite, dir: &Path) -> Result<SuiteManifest, FusionError> {
    fs::create_dir_all(dir)?;
    let mut targets = Vec::new();
    for (t, m) in Target::ALL.iter().zip(&suite.models) {
        let file = format!("{}.model", t.name());
        fs::write(dir.join(&file), m.to_bytes())?;
        targets.push(ManifestTarget {
            target: t.name().to_string(),
            classes: t.class_count(),
            file,
        });
    }
    let manifest = SuiteManifest {
        schema_version: SUITE_SCHEMA_VERSION,
        mode: suite.mode,
        input_dim: suite.mode.dim(),
        seed: suite.seed,
        classifier: suite.params,
        feature_dictionary_hash: feature_dictionary_hash(),
        targets,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

pub fn load_suite(dir: &Path) -> Result<ModelSuite, FusionError> {
    let raw = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: SuiteManifest =
        serde_json::from_slice(&raw).map_err(|e| FusionError::Manifest(e.to_string()))?;
    if manifest.schema_version != SUITE_SCHEMA_VERSION {
        return Err(FusionError::Manifest(format!(
            "schema version {} (expected {SUITE_SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    if manifest.feature_dictionary_hash != feature_dictionary_hash() {
        return Err(FusionError::Manifest(
            "feature dictionary hash differs from this build".into(),
        ));
    }
    if manifest.input_dim != manifest.mode.dim() {
        return Err(FusionError::Manifest("input_dim does not match mode".into()));
    }
    let mut models = Vec::with_capacity(Target::ALL.len());
    for t in Target::ALL {
        let entry = manifest
            .targets
            .iter()
            .find(|e| e.target == t.name())
            .ok_or_else(|| FusionError::Manifest(format!("missing target {}", t.name())))?;
        if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
            return Err(FusionError::Manifest(format!("bad file name {:?}", entry.file)));
        }
        let model = Model::from_bytes(&fs::read(dir.join(&entry.file))?)?;
        if model.dim() != manifest.input_dim || model.class_count() != t.class_count() {
            return Err(FusionError::Manifest(format!(
                "{} model has shape {}x{}",
                t.name(),
                model.dim(),
                model.class_count()
            )));
        }
        models.push(model);
    }
    Ok(ModelSuite {
        mode: manifest.mode,
        seed: manifest.seed,
        params: manifest.classifier,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ForestParams;
    use crate::features::{ContentFeatureVector, KeystrokeFeatureVector};
    use EmotionCategory::*;

    fn te(labels: &[EmotionCategory]) -> TextEmotion {
        TextEmotion {
            valence: Level::NEGATIVE,
            arousal: Level::POSITIVE,
            labels: LabelSet::new(labels.iter().copied()).unwrap(),
            confidence: 0.8,
        }
    }

    fn row(kd_valid: bool, v: f64) -> FeatureRow {
        FeatureRow {
            message_id: "m".into(),
            kd: KeystrokeFeatureVector {
                dwell_mean: v,
                key_count: 5.0,
                ..Default::default()
            },
            content: ContentFeatureVector {
                word_count: 3.0,
                ..Default::default()
            },
            kd_valid,
        }
    }

    #[test]
    fn fused_layout() {
        let f = build_fused_row(&row(true, 90.0), &te(&[Anger, Fear]));
        assert_eq!(f.values.len(), FUSED_DIM);
        let indicators = &f.values[FEATURE_DIM + 2..FEATURE_DIM + 9];
        assert_eq!(indicators.iter().filter(|v| **v == 1.0).count(), 2);
        assert_eq!(f.values[FEATURE_DIM + 9], 0.8);

        let f = build_fused_row(&row(false, 90.0), &te(&[Anger]));
        assert!(f.values[..FEATURE_DIM].iter().all(|v| *v == 0.0));
        assert_eq!(fused_feature_names().len(), FUSED_DIM);
    }

    #[test]
    fn label_selection_rules() {
        let probs = |v: [f64; 7]| -> Vec<(EmotionCategory, f64)> {
            EmotionCategory::ALL.into_iter().zip(v).collect()
        };
        // order: neutral happiness sadness disgust fear surprise anger
        let l = select_labels(&probs([0.1, 0.2, 0.6, 0.3, 0.7, 0.1, 0.9]));
        let names: Vec<_> = l.iter().map(|s| s.label).collect();
        assert_eq!(names, vec![Anger, Fear, Sadness]);

        let l = select_labels(&probs([0.45, 0.2, 0.1, 0.3, 0.4, 0.1, 0.2]));
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].label, Neutral);

        let l = select_labels(&probs([0.9, 0.8, 0.7, 0.6, 0.55, 0.1, 0.2]));
        assert_eq!(l.len(), 3);
    }

    fn labeled(i: usize, cat: EmotionCategory) -> LabeledRow {
        LabeledRow {
            features: row(true, 50.0 + i as f64),
            text: te(&[cat]),
            gold: Some(EmotionAnnotation {
                message_id: format!("m{i}"),
                valence: Level::POSITIVE,
                arousal: Level::ZERO,
                labels: LabelSet::single(cat),
                annotator_id: "gold".into(),
            }),
        }
    }

    fn small_params() -> ClassifierParams {
        ClassifierParams::Forest(ForestParams {
            n_trees: 10,
            ..Default::default()
        })
    }

    #[test]
    fn single_category_corpus() {
        let rows: Vec<_> = (0..20).map(|i| labeled(i, Happiness)).collect();
        let suite = train_suite(&rows, Mode::Fusion, &small_params(), 1).unwrap();
        let p = predict_message(&suite, "x", &rows[3].input(Mode::Fusion)).unwrap();
        assert_eq!(p.labels.len(), 1);
        assert_eq!(p.labels[0].label, Happiness);
        assert_eq!(p.labels[0].confidence, 1.0);
        assert_eq!(p.valence.value, Level::POSITIVE);
        for c in EmotionCategory::ALL.into_iter().filter(|c| *c != Happiness) {
            let m = suite.model(Target::Category(c));
            assert_eq!(m.predict(&rows[0].input(Mode::Fusion)).unwrap().class, 0);
        }
    }

    #[test]
    fn mode_controls_dim() {
        let rows: Vec<_> = (0..20)
            .map(|i| labeled(i, if i % 2 == 0 { Anger } else { Fear }))
            .collect();
        let suite = train_suite(&rows, Mode::Text, &small_params(), 1).unwrap();
        assert!(suite.models.iter().all(|m| m.dim() == TEXT_DIM));
        assert!(matches!(
            predict_message(&suite, "x", &[0.0; FUSED_DIM]),
            Err(FusionError::DimMismatch { expected: 10, got: 43 })
        ));
    }

    #[test]
    fn missing_gold_rejected() {
        let mut rows: Vec<_> = (0..5).map(|i| labeled(i, Anger)).collect();
        rows[2].gold = None;
        assert!(matches!(
            train_suite(&rows, Mode::Kd, &small_params(), 1),
            Err(FusionError::MissingLabels(_))
        ));
    }

    #[test]
    fn suite_round_trip() {
        let rows: Vec<_> = (0..30)
            .map(|i| labeled(i, EmotionCategory::ALL[i % 7]))
            .collect();
        let suite = train_suite(&rows, Mode::Fusion, &small_params(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_suite(&suite, dir.path()).unwrap();
        assert_eq!(manifest.targets.len(), 9);
        assert_eq!(load_suite(dir.path()).unwrap(), suite);

        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace(&manifest.feature_dictionary_hash, "00")).unwrap();
        assert!(matches!(load_suite(dir.path()), Err(FusionError::Manifest(_))));
    }
}
