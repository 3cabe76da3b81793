//! Metrics, cross-validation, inter-annotator agreement and annotation
//! aggregation.

mod agreement;
mod metrics;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{krippendorff_alpha, AgreementReport, DistanceMetric};
pub use metrics::{compute_metrics, compute_metrics_with_classes, ClassMetrics, MetricsReport};

use crate::classifier::{ClassifierError, ClassifierParams, Dataset, Model};
use crate::fusion::{train_suite, FusionError, LabeledRow, Mode, ModelSuite, Target};
use crate::model::{EmotionAnnotation, EmotionCategory};
use crate::seed::{derive_seed, stream_id};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("y_true has {truth} entries but y_pred has {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no samples")]
    Empty,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{rows} rows cannot be split into {k} folds (need k >= 2 and rows >= k)")]
    TooFewRows { rows: usize, k: usize },
    #[error("annotation sets differ: {0}")]
    IdMismatch(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Seeded shuffled k-fold split: returns the held-out indices of each fold.
/// Fold sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || n < k {
        return Err(EvalError::TooFewRows { rows: n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = held_out.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub balanced_accuracy: MeanStd,
}

impl ScoreSummary {
    pub fn of(reports: &[&MetricsReport]) -> ScoreSummary {
        let pick = |f: fn(&MetricsReport) -> f64| {
            MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        ScoreSummary {
            accuracy: pick(|r| r.accuracy),
            precision: pick(|r| r.precision),
            recall: pick(|r| r.recall),
            f1: pick(|r| r.f1),
            balanced_accuracy: pick(|r| r.balanced_accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<MetricsReport>,
    pub summary: ScoreSummary,
}

/// k-fold cross-validation of a single classifier on one dataset.
pub fn cross_validate_dataset(
    data: &Dataset,
    k: usize,
    params: &ClassifierParams,
    seed: u64,
) -> Result<CvReport, EvalError> {
    let folds = kfold_indices(data.len(), k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let train = data.subset(&complement(data.len(), test));
        let model = Model::train(&train, params, derive_seed(seed, f as u64))?;
        let mut y_true = Vec::with_capacity(test.len());
        let mut y_pred = Vec::with_capacity(test.len());
        for &i in test {
            y_true.push(data.label(i));
            y_pred.push(model.predict(data.row(i))?.class);
        }
        reports.push(compute_metrics_with_classes(&y_true, &y_pred, data.class_count())?);
    }
    let summary = ScoreSummary::of(&reports.iter().collect::<Vec<_>>());
    Ok(CvReport {
        folds: reports,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub metrics: MetricsReport,
}

/// Scores a trained suite against the gold labels of `rows`, one report per
/// target in [`Target::ALL`] order.
pub fn evaluate_suite(suite: &ModelSuite, rows: &[LabeledRow]) -> Result<Vec<TargetReport>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut truth = vec![Vec::with_capacity(rows.len()); Target::ALL.len()];
    let mut pred = vec![Vec::with_capacity(rows.len()); Target::ALL.len()];
    for r in rows {
        let gold = r
            .gold
            .as_ref()
            .ok_or_else(|| FusionError::MissingLabels(r.features.message_id.clone()))?;
        let classes = suite.predict_classes(&r.input(suite.mode))?;
        for (t, target) in Target::ALL.iter().enumerate() {
            truth[t].push(target.gold_class(gold));
            pred[t].push(classes[t]);
        }
    }
    Target::ALL
        .iter()
        .enumerate()
        .map(|(t, target)| {
            Ok(TargetReport {
                target: target.name().to_string(),
                metrics: compute_metrics_with_classes(&truth[t], &pred[t], target.class_count())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCvReport {
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    /// `folds[f]` holds one report per target.
    pub folds: Vec<Vec<TargetReport>>,
    /// Per-target mean/std across folds, [`Target::ALL`] order.
    pub summary: Vec<(String, ScoreSummary)>,
}

impl SuiteCvReport {
    pub fn summary_for(&self, target: Target) -> &ScoreSummary {
        &self
            .summary
            .iter()
            .find(|(n, _)| n == target.name())
            .expect("every target summarized")
            .1
    }
}

/// Seeded k-fold cross-validation of a full model suite.
pub fn cross_validate(
    rows: &[LabeledRow],
    k: usize,
    mode: Mode,
    params: &ClassifierParams,
    seed: u64,
) -> Result<SuiteCvReport, EvalError> {
    let folds = kfold_indices(rows.len(), k, seed)?;
    let mut fold_reports = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<LabeledRow> = complement(rows.len(), test)
            .into_iter()
            .map(|i| rows[i].clone())
            .collect();
        let held: Vec<LabeledRow> = test.iter().map(|&i| rows[i].clone()).collect();
        let suite = train_suite(&train, mode, params, derive_seed(seed, f as u64))?;
        fold_reports.push(evaluate_suite(&suite, &held)?);
    }
    let summary = Target::ALL
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let reports: Vec<&MetricsReport> = fold_reports.iter().map(|f| &f[t].metrics).collect();
            (target.name().to_string(), ScoreSummary::of(&reports))
        })
        .collect();
    Ok(SuiteCvReport {
        mode,
        k,
        seed,
        folds: fold_reports,
        summary,
    })
}

/// Accuracy / precision / recall / F1 for each target, laid out with one row
/// per metric and one column per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub columns: Vec<String>,
    pub accuracy: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

impl ScoreTable {
    pub fn from_reports(reports: &[TargetReport]) -> ScoreTable {
        let title = |name: &str| name[..1].to_uppercase() + &name[1..];
        ScoreTable {
            columns: reports.iter().map(|r| title(&r.target)).collect(),
            accuracy: reports.iter().map(|r| r.metrics.accuracy).collect(),
            precision: reports.iter().map(|r| r.metrics.precision).collect(),
            recall: reports.iter().map(|r| r.metrics.recall).collect(),
            f1: reports.iter().map(|r| r.metrics.f1).collect(),
        }
    }

    pub fn from_cv(report: &SuiteCvReport) -> ScoreTable {
        let title = |name: &str| name[..1].to_uppercase() + &name[1..];
        let s = &report.summary;
        ScoreTable {
            columns: s.iter().map(|(n, _)| title(n)).collect(),
            accuracy: s.iter().map(|(_, v)| v.accuracy.mean).collect(),
            precision: s.iter().map(|(_, v)| v.precision.mean).collect(),
            recall: s.iter().map(|(_, v)| v.recall.mean).collect(),
            f1: s.iter().map(|(_, v)| v.f1.mean).collect(),
        }
    }

    fn rows(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("Accuracy", &self.accuracy),
            ("Precision", &self.precision),
            ("Recall", &self.recall),
            ("F1 score", &self.f1),
        ]
    }

    pub fn render_text(&self) -> String {
        let width = self.columns.iter().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:<10}", "");
        for c in &self.columns {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
        for (name, values) in self.rows() {
            let _ = write!(out, "{name:<10}");
            for v in values {
                let _ = write!(out, " {v:>width$.3}");
            }
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("metric");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, values) in self.rows() {
            out.push_str(name);
            for v in values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn index_by_id(
    set: &[EmotionAnnotation],
) -> Result<HashMap<&str, &EmotionAnnotation>, EvalError> {
    let mut map = HashMap::with_capacity(set.len());
    for a in set {
        if map.insert(a.message_id.as_str(), a).is_some() {
            return Err(EvalError::IdMismatch(format!("duplicate message id {}", a.message_id)));
        }
    }
    Ok(map)
}

/// Merges two annotators' labels into a gold set. Agreeing fields are kept;
/// each disagreeing field (valence, arousal, whole label set) is taken from
/// one annotator chosen by a per-message RNG derived from `seed`.
pub fn aggregate_annotations(
    first: &[EmotionAnnotation],
    second: &[EmotionAnnotation],
    seed: u64,
) -> Result<Vec<EmotionAnnotation>, EvalError> {
    let other = index_by_id(second)?;
    if other.len() != first.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} vs {} annotations",
            first.len(),
            second.len()
        )));
    }
    index_by_id(first)?;
    first
        .iter()
        .map(|a| {
            let b = other
                .get(a.message_id.as_str())
                .ok_or_else(|| EvalError::IdMismatch(format!("{} missing", a.message_id)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream_id(&a.message_id)));
            let (pick_v, pick_a, pick_l): (bool, bool, bool) =
                (rng.random(), rng.random(), rng.random());
            Ok(EmotionAnnotation {
                message_id: a.message_id.clone(),
                valence: if pick_v { b.valence } else { a.valence },
                arousal: if pick_a { b.arousal } else { a.arousal },
                labels: if pick_l { b.labels.clone() } else { a.labels.clone() },
                annotator_id: "gold".into(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAgreement {
    pub valence: AgreementReport,
    pub arousal: AgreementReport,
    pub categories: Vec<(EmotionCategory, AgreementReport)>,
    pub mean_category_alpha: f64,
}

/// Alpha for valence and arousal (interval) and for each category
/// indicator (nominal). Messages present in only one set count as missing.
pub fn annotation_agreement(
    first: &[EmotionAnnotation],
    second: &[EmotionAnnotation],
) -> Result<AnnotationAgreement, EvalError> {
    let a = index_by_id(first)?;
    let b = index_by_id(second)?;
    let mut ids: Vec<&str> = a.keys().chain(b.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();

    let matrix = |f: &dyn Fn(&EmotionAnnotation) -> f64| -> Vec<Vec<Option<f64>>> {
        ids.iter()
            .map(|id| vec![a.get(id).map(|x| f(x)), b.get(id).map(|x| f(x))])
            .collect()
    };
    let valence = krippendorff_alpha(&matrix(&|x| x.valence.value() as f64), DistanceMetric::Interval)?;
    let arousal = krippendorff_alpha(&matrix(&|x| x.arousal.value() as f64), DistanceMetric::Interval)?;
    let categories = EmotionCategory::ALL
        .into_iter()
        .map(|c| {
            let m = matrix(&|x| if x.labels.contains(c) { 1.0 } else { 0.0 });
            Ok((c, krippendorff_alpha(&m, DistanceMetric::Nominal)?))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mean_category_alpha =
        categories.iter().map(|(_, r)| r.alpha).sum::<f64>() / categories.len() as f64;
    Ok(AnnotationAgreement {
        valence,
        arousal,
        categories,
        mean_category_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ForestParams;
    use crate::model::{LabelSet, Level};
    use EmotionCategory::*;

    #[test]
    fn folds_partition_rows() {
        let folds = kfold_indices(100, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(folds, kfold_indices(100, 5, 3).unwrap());
        assert_ne!(folds, kfold_indices(100, 5, 4).unwrap());

        let uneven = kfold_indices(7, 3, 0).unwrap();
        assert_eq!(uneven.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert!(matches!(kfold_indices(3, 5, 0), Err(EvalError::TooFewRows { .. })));
        assert!(matches!(kfold_indices(10, 1, 0), Err(EvalError::TooFewRows { .. })));
    }

    #[test]
    fn separable_two_fold() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            rows.push(vec![-3.0 - i as f64 * 0.1, 0.5]);
            labels.push(0);
            rows.push(vec![3.0 + i as f64 * 0.1, 0.5]);
            labels.push(1);
        }
        let data = Dataset::new(rows, labels, 2).unwrap();
        let params = ClassifierParams::Forest(ForestParams {
            n_trees: 25,
            ..Default::default()
        });
        let cv = cross_validate_dataset(&data, 2, &params, 9).unwrap();
        assert_eq!(cv.folds.len(), 2);
        assert!(cv.folds.iter().all(|f| f.accuracy == 1.0));
    }

    fn ann(id: &str, v: i64, a: i64, labels: &[EmotionCategory]) -> EmotionAnnotation {
        EmotionAnnotation {
            message_id: id.into(),
            valence: Level::new(v).unwrap(),
            arousal: Level::new(a).unwrap(),
            labels: LabelSet::new(labels.iter().copied()).unwrap(),
            annotator_id: "x".into(),
        }
    }

    #[test]
    fn aggregation_keeps_agreement() {
        let a = vec![ann("1", 1, 0, &[Happiness]), ann("2", -1, 1, &[Anger, Fear])];
        let gold = aggregate_annotations(&a, &a, 5).unwrap();
        for (g, x) in gold.iter().zip(&a) {
            assert_eq!((g.valence, g.arousal, &g.labels), (x.valence, x.arousal, &x.labels));
        }
    }

    #[test]
    fn aggregation_picks_whole_fields() {
        let a = vec![ann("1", -1, 0, &[Anger])];
        let b = vec![ann("1", 1, 0, &[Fear])];
        let mut seen_v = BTreeSet::new();
        for seed in 0..40 {
            let g = aggregate_annotations(&a, &b, seed).unwrap();
            assert_eq!(g, aggregate_annotations(&a, &b, seed).unwrap());
            assert!(g[0].labels == a[0].labels || g[0].labels == b[0].labels);
            seen_v.insert(g[0].valence.value());
        }
        assert_eq!(seen_v.into_iter().collect::<Vec<_>>(), vec![-1, 1]);
    }

    #[test]
    fn aggregation_requires_same_ids() {
        let a = vec![ann("1", 0, 0, &[Neutral])];
        let b = vec![ann("2", 0, 0, &[Neutral])];
        assert!(matches!(aggregate_annotations(&a, &b, 0), Err(EvalError::IdMismatch(_))));
    }

    #[test]
    fn identical_annotators_agree_fully() {
        let a = vec![
            ann("1", 1, 0, &[Happiness]),
            ann("2", -1, 1, &[Anger, Fear]),
            ann("3", 0, -1, &[Neutral]),
        ];
        let r = annotation_agreement(&a, &a).unwrap();
        assert_eq!(r.valence.alpha, 1.0);
        assert_eq!(r.arousal.alpha, 1.0);
        assert!(r.categories.iter().all(|(_, c)| c.alpha == 1.0));
        assert_eq!(r.mean_category_alpha, 1.0);
    }

    #[test]
    fn table_layout() {
        let m = compute_metrics(&[0, 1], &[0, 1]).unwrap();
        let reports: Vec<TargetReport> = Target::ALL
            .iter()
            .map(|t| TargetReport {
                target: t.name().into(),
                metrics: m.clone(),
            })
            .collect();
        let table = ScoreTable::from_reports(&reports);
        let text = table.render_text();
        let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(
            header,
            vec!["Valence", "Arousal", "Neutral", "Happiness", "Sadness", "Disgust", "Fear", "Surprise", "Anger"]
        );
        assert_eq!(text.lines().count(), 5);
        assert!(table.render_csv().starts_with("metric,Valence,Arousal"));
    }
}
