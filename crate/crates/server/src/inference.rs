//! Per-message inference: features, text analysis and suite routing.

use std::sync::Arc;

use keysense_core::features::{build_feature_row, FeatureRow};
use keysense_core::fusion::{predict_message, FusionError, Mode, ModelSuite};
use keysense_core::model::{
    ChatMessage, EmotionPrediction, MessageEventWindow, PredictionSource, ScoredLabel, ScoredLevel,
};
use keysense_core::text::{redact_pii, ConversationContext, TextEmotion};

use crate::analyzer::FallbackAnalyzer;

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub features: FeatureRow,
    pub text_emotion: TextEmotion,
    pub prediction: EmotionPrediction,
}

/// Shared, immutable inference configuration.
#[derive(Clone)]
pub struct InferenceEngine {
    pub primary: Option<Arc<ModelSuite>>,
    pub fallback: Option<Arc<ModelSuite>>,
    pub analyzer: FallbackAnalyzer,
    pub pause_threshold_ms: f64,
}

fn usable(suite: &ModelSuite, row: &FeatureRow) -> bool {
    suite.mode == Mode::Text || row.kd_valid
}

/// Analyzer output as a prediction, for when no suite applies.
pub fn prediction_from_text(message_id: &str, te: &TextEmotion, degraded: bool) -> EmotionPrediction {
    EmotionPrediction {
        message_id: message_id.to_string(),
        valence: ScoredLevel {
            value: te.valence,
            confidence: te.confidence,
        },
        arousal: ScoredLevel {
            value: te.arousal,
            confidence: te.confidence,
        },
        labels: te
            .labels
            .iter()
            .map(|label| ScoredLabel {
                label,
                confidence: te.confidence,
            })
            .collect(),
        source: PredictionSource::Text,
        degraded,
    }
}

impl InferenceEngine {
    /// Featurizes `window`, analyzes the redacted text in `context`, and
    /// predicts with the first configured suite that can serve the message
    /// (keystroke suites need a valid keystroke window). Without one, the
    /// analyzer's own output is the prediction. `degraded` marks analyzer
    /// fallback.
    pub async fn infer(
        &self,
        message: &ChatMessage,
        window: &MessageEventWindow,
        context: &ConversationContext,
    ) -> Result<Inference, FusionError> {
        let features = build_feature_row(message, window, self.pause_threshold_ms);
        let analysis = self
            .analyzer
            .analyze(context, message.sender_role, &redact_pii(&message.text))
            .await;
        let suite = [&self.primary, &self.fallback]
            .into_iter()
            .flatten()
            .find(|s| usable(s, &features));
        let prediction = match suite {
            Some(s) => {
                let input = s.mode.project(&features, &analysis.emotion);
                let mut p = predict_message(s, &message.message_id, &input)?;
                p.degraded = analysis.degraded;
                p
            }
            None => prediction_from_text(&message.message_id, &analysis.emotion, analysis.degraded),
        };
        Ok(Inference {
            features,
            text_emotion: analysis.emotion,
            prediction,
        })
    }
}
