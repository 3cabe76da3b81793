//! Text-emotion analysis.
//!
//! Two analyzers implement [`TextAnalyzer`]: the offline [`LexiconAnalyzer`]
//! and a remote LLM client (transport lives in the server crate) that talks
//! the request/response contract defined here. Text is passed through
//! [`redact_pii`] before it leaves the process.

use std::sync::OnceLock;

use async_trait::async_trait;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmotionCategory, LabelSet, Level, Role};

pub const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzerError {
    #[error("analyzer unavailable: {0}")]
    Unavailable(String),
    #[error("unparseable analyzer response: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmotion {
    pub valence: Level,
    pub arousal: Level,
    pub labels: LabelSet,
    pub confidence: f64,
}

impl TextEmotion {
    pub fn is_valid(&self) -> bool {
        self.labels.len() <= LabelSet::MAX && (0.0..=1.0).contains(&self.confidence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// Chronological transcript up to (not including) the message being rated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub turns: Vec<Turn>,
}

impl ConversationContext {
    pub fn push(&mut self, role: Role, text: impl Into<String>) {
        self.turns.push(Turn {
            role,
            text: text.into(),
        });
    }

    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.role, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[async_trait]
pub trait TextAnalyzer: Send + Sync {
    /// Rates `text`, written by `sender`, given the earlier turns.
    async fn analyze(
        &self,
        context: &ConversationContext,
        sender: Role,
        text: &str,
    ) -> Result<TextEmotion, AnalyzerError>;

    fn name(&self) -> &'static str;
}

fn email_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}").unwrap())
}

fn phone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\+?\(?\d[\d\s().\-]*\d").unwrap())
}

/// Replaces email addresses with `[EMAIL]` and phone-like digit runs
/// (seven or more digits, optionally separated) with `[PHONE]`.
pub fn redact_pii(text: &str) -> String {
    let text = email_re().replace_all(text, "[EMAIL]");
    phone_re()
        .replace_all(&text, |caps: &Captures| {
            let m = &caps[0];
            if m.chars().filter(char::is_ascii_digit).count() >= 7 {
                "[PHONE]".to_string()
            } else {
                m.to_string()
            }
        })
        .into_owned()
}

/// Per-category word lists; `true` marks intense words that score double.
const LEXICON: &[(EmotionCategory, &[(&str, bool)])] = &[
    (
        EmotionCategory::Happiness,
        &[
            ("happy", false), ("glad", false), ("joy", false), ("joyful", false),
            ("awesome", false), ("cheerful", false), ("great", false), ("love", false),
            ("lovely", false), ("delighted", true), ("wonderful", false), ("fun", false),
            ("funny", false), ("excited", false), ("smile", false), ("laugh", false),
            ("enjoyed", false), ("enjoy", false), ("pleased", false), ("thrilled", true),
            ("ecstatic", true), ("grateful", false), ("hilarious", true), ("cute", false),
        ],
    ),
    (
        EmotionCategory::Sadness,
        &[
            ("sad", false), ("tears", false), ("lonely", false), ("unhappy", false),
            ("hopeless", true), ("cry", false), ("crying", false), ("cried", false),
            ("depressed", true), ("miserable", true), ("grief", true), ("heartbroken", true),
            ("sorrow", false), ("gloomy", false), ("down", false), ("lost", false),
            ("hurt", false), ("miss", false), ("empty", false), ("tragic", false),
        ],
    ),
    (
        EmotionCategory::Disgust,
        &[
            ("disgust", false), ("disgusting", true), ("disgusted", true), ("gross", false),
            ("nasty", false), ("filthy", false), ("repulsed", true), ("revolting", true),
            ("vile", true), ("yuck", false), ("sickening", true), ("eww", false),
            ("repulsive", true), ("creepy", false),
        ],
    ),
    (
        EmotionCategory::Fear,
        &[
            ("scary", false), ("afraid", false), ("anxious", false), ("dreading", false),
            ("scared", false), ("fear", false), ("frightened", true), ("terrified", true),
            ("nervous", false), ("worried", false), ("panic", true), ("horror", true),
            ("creeped", false), ("uneasy", false), ("terrifying", true),
        ],
    ),
    (
        EmotionCategory::Surprise,
        &[
            ("shock", false), ("amazed", false), ("stunned", false), ("startled", false),
            ("surprised", false), ("surprise", false), ("unexpected", false), ("wow", false),
            ("whoa", false), ("shocked", true), ("astonished", true), ("unbelievable", false),
            ("suddenly", false),
        ],
    ),
    (
        EmotionCategory::Anger,
        &[
            ("angry", false), ("raging", true), ("furious", true), ("outraged", true),
            ("mad", false), ("annoyed", false), ("hate", false), ("irritated", false),
            ("frustrated", false), ("rage", true), ("pissed", true), ("unfair", false),
            ("infuriating", true),
        ],
    ),
];

fn lexicon_lookup(word: &str) -> Option<(EmotionCategory, f64)> {
    LEXICON.iter().find_map(|(cat, words)| {
        words
            .iter()
            .find(|(w, _)| *w == word)
            .map(|(_, intense)| (*cat, if *intense { 2.0 } else { 1.0 }))
    })
}

/// Whether `word` (lowercase) is in the built-in lexicon.
pub fn is_lexicon_word(word: &str) -> bool {
    lexicon_lookup(word).is_some()
}

/// Words of the built-in lexicon for one category.
pub fn lexicon_words(category: EmotionCategory) -> Vec<&'static str> {
    LEXICON
        .iter()
        .filter(|(c, _)| *c == category)
        .flat_map(|(_, ws)| ws.iter().map(|(w, _)| *w))
        .collect()
}

/// Offline keyword scorer.
///
/// Each lexicon hit adds 1 (2 for intense words) to its category. Labels are
/// the top three scoring categories, or `neutral` when nothing matched.
/// Valence is the sign of happiness hits minus the four negative categories;
/// surprise is valence-neutral. Arousal thresholds the total hit score plus
/// the number of exclamation marks: 0 → -1, below 3 → 0, otherwise 1.
#[derive(Debug, Clone, Default)]
pub struct LexiconAnalyzer;

impl LexiconAnalyzer {
    pub fn new() -> Self {
        LexiconAnalyzer
    }

    /// Context is accepted for contract parity; the lexicon rates the message
    /// text on its own.
    pub fn score(&self, _context: &ConversationContext, text: &str) -> TextEmotion {
        let lowered = text.to_lowercase();
        let mut scores = [0.0f64; 7];
        for word in lowered
            .split(|c: char| !(c.is_alphabetic() || c == '\''))
            .filter(|w| !w.is_empty())
        {
            if let Some((cat, s)) = lexicon_lookup(word) {
                scores[cat.index()] += s;
            }
        }
        let total: f64 = scores.iter().sum();
        let exclaims = text.matches('!').count() as f64;

        let mut ranked: Vec<EmotionCategory> = EmotionCategory::ALL
            .into_iter()
            .filter(|c| scores[c.index()] > 0.0)
            .collect();
        // stable: equal scores keep canonical order
        ranked.sort_by(|a, b| scores[b.index()].total_cmp(&scores[a.index()]));
        ranked.truncate(LabelSet::MAX);

        let labels = if ranked.is_empty() {
            LabelSet::single(EmotionCategory::Neutral)
        } else {
            LabelSet::new(ranked).expect("distinct and at most three")
        };

        let positive = scores[EmotionCategory::Happiness.index()];
        let negative: f64 = [
            EmotionCategory::Sadness,
            EmotionCategory::Disgust,
            EmotionCategory::Fear,
            EmotionCategory::Anger,
        ]
        .iter()
        .map(|c| scores[c.index()])
        .sum();
        let valence = match (positive - negative).partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => Level::POSITIVE,
            Some(std::cmp::Ordering::Less) => Level::NEGATIVE,
            _ => Level::ZERO,
        };

        let intensity = total + exclaims;
        let arousal = if intensity == 0.0 {
            Level::NEGATIVE
        } else if intensity < 3.0 {
            Level::ZERO
        } else {
            Level::POSITIVE
        };

        let confidence = if total == 0.0 { 0.4 } else { total / (total + 1.0) };
        TextEmotion {
            valence,
            arousal,
            labels,
            confidence,
        }
    }
}

#[async_trait]
impl TextAnalyzer for LexiconAnalyzer {
    async fn analyze(
        &self,
        context: &ConversationContext,
        _sender: Role,
        text: &str,
    ) -> Result<TextEmotion, AnalyzerError> {
        Ok(self.score(context, text))
    }

    fn name(&self) -> &'static str {
        "lexicon"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions style request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPayload {
    pub model: String,
    pub messages: Vec<PromptMessage>,
    pub temperature: f64,
    pub response_format: serde_json::Value,
}

/// Renders the prompt for one target message. Callers redact all texts
/// before building the request.
pub fn build_remote_request(
    model: &str,
    context: &ConversationContext,
    sender: Role,
    text: &str,
) -> RequestPayload {
    let transcript = if context.turns.is_empty() {
        "(no earlier messages)".to_string()
    } else {
        context.transcript()
    };
    let prompt = PROMPT_TEMPLATE
        .replace("{{ROLE}}", &sender.to_string())
        .replace("{{TRANSCRIPT}}", &transcript)
        .replace("{{MESSAGE}}", text);
    RequestPayload {
        model: model.to_string(),
        messages: vec![PromptMessage {
            role: "user".into(),
            content: prompt,
        }],
        temperature: 0.0,
        response_format: serde_json::json!({ "type": "json_object" }),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    valence: serde_json::Number,
    arousal: serde_json::Number,
    labels: Vec<String>,
    confidence: f64,
}

fn parse_level(n: &serde_json::Number, field: &str) -> Result<Level, AnalyzerError> {
    n.as_i64()
        .and_then(|v| Level::new(v).ok())
        .ok_or_else(|| AnalyzerError::Parse(format!("{field} must be -1, 0 or 1, got {n}")))
}

/// Parses the strict `{valence, arousal, labels, confidence}` object.
pub fn parse_remote_response(bytes: &[u8]) -> Result<TextEmotion, AnalyzerError> {
    let raw: RawResponse =
        serde_json::from_slice(bytes).map_err(|e| AnalyzerError::Parse(e.to_string()))?;
    let valence = parse_level(&raw.valence, "valence")?;
    let arousal = parse_level(&raw.arousal, "arousal")?;
    if raw.labels.len() > LabelSet::MAX {
        return Err(AnalyzerError::Parse(format!(
            "{} labels, at most 3 allowed",
            raw.labels.len()
        )));
    }
    let cats = raw
        .labels
        .iter()
        .map(|l| l.trim().to_lowercase().parse::<EmotionCategory>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| AnalyzerError::Parse(e.to_string()))?;
    let labels = LabelSet::new(cats).map_err(|e| AnalyzerError::Parse(e.to_string()))?;
    if !(0.0..=1.0).contains(&raw.confidence) {
        return Err(AnalyzerError::Parse(format!(
            "confidence {} outside [0, 1]",
            raw.confidence
        )));
    }
    Ok(TextEmotion {
        valence,
        arousal,
        labels,
        confidence: raw.confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionCategory::*;

    fn score(text: &str) -> TextEmotion {
        LexiconAnalyzer.score(&ConversationContext::default(), text)
    }

    #[test]
    fn lexicon_examples() {
        let te = score("I am so happy today");
        assert_eq!(te.labels, LabelSet::single(Happiness));
        assert_eq!(te.valence, Level::POSITIVE);

        let te = score("This is disgusting");
        assert_eq!(te.labels, LabelSet::single(Disgust));
        assert_eq!(te.valence, Level::NEGATIVE);

        let te = score("ok");
        assert_eq!(te.labels, LabelSet::single(Neutral));
        assert_eq!(te.valence, Level::ZERO);
        assert_eq!(te.arousal, Level::NEGATIVE);
    }

    #[test]
    fn lexicon_caps_labels_and_scores_arousal() {
        let te = score("angry and furious, scared, sad, gross!!!");
        assert_eq!(te.labels.len(), 3);
        assert!(te.labels.contains(Anger));
        assert_eq!(te.arousal, Level::POSITIVE);
        assert!(te.is_valid());
    }

    #[test]
    fn redaction() {
        assert_eq!(redact_pii("mail me a@b.com"), "mail me [EMAIL]");
        assert_eq!(redact_pii("call 555-123-4567"), "call [PHONE]");
        assert_eq!(redact_pii("no pii here"), "no pii here");
        assert_eq!(redact_pii("room 42, 3 people"), "room 42, 3 people");
        assert_eq!(redact_pii("+65 9123 4567 now"), "[PHONE] now");
        let once = redact_pii("x.y@mail.example.org or (555) 123-4567");
        assert_eq!(once, "[EMAIL] or [PHONE]");
        assert_eq!(redact_pii(&once), once);
    }

    #[test]
    fn remote_response_parsing() {
        let te = parse_remote_response(
            br#"{"valence":1,"arousal":0,"labels":["happiness"],"confidence":0.9}"#,
        )
        .unwrap();
        assert_eq!(te.valence, Level::POSITIVE);
        assert_eq!(te.arousal, Level::ZERO);
        assert_eq!(te.labels, LabelSet::single(Happiness));
        assert_eq!(te.confidence, 0.9);

        let four = br#"{"valence":1,"arousal":0,"labels":["happiness","fear","anger","sadness"],"confidence":0.9}"#;
        assert!(matches!(parse_remote_response(four), Err(AnalyzerError::Parse(_))));
        let bad = br#"{"valence":2,"arousal":0,"labels":[],"confidence":0.9}"#;
        assert!(matches!(parse_remote_response(bad), Err(AnalyzerError::Parse(_))));
        let frac = br#"{"valence":0.5,"arousal":0,"labels":[],"confidence":0.9}"#;
        assert!(parse_remote_response(frac).is_err());
        let extra = br#"{"valence":0,"arousal":0,"labels":[],"confidence":0.9,"why":"x"}"#;
        assert!(parse_remote_response(extra).is_err());
        assert!(parse_remote_response(b"Sure! Here you go").is_err());
        let unknown = br#"{"valence":0,"arousal":0,"labels":["joy"],"confidence":0.5}"#;
        assert!(parse_remote_response(unknown).is_err());
    }

    #[test]
    fn prompt_carries_transcript_scales_and_categories() {
        let mut ctx = ConversationContext::default();
        ctx.push(Role::Responder, "How are you feeling after the video?");
        let req = build_remote_request("gpt-x", &ctx, Role::Client, "pretty shaken");
        let prompt = &req.messages[0].content;
        assert!(prompt.contains("responder: How are you feeling after the video?"));
        assert!(prompt.contains("pretty shaken"));
        assert!(prompt.contains("-1") && prompt.contains("0 =") && prompt.contains("1 ="));
        for c in EmotionCategory::ALL {
            assert!(prompt.contains(c.name()), "missing {c}");
        }
        assert_eq!(req.model, "gpt-x");
    }
}
