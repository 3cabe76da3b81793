//! Domain types shared across the toolkit, plus validation and per-message
//! segmentation of raw keystroke streams.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum message length in Unicode scalar values.
pub const MAX_MESSAGE_CHARS: usize = 10_000;

/// A regression of the client clock larger than this is treated as a reset.
pub const CLOCK_RESET_THRESHOLD_MS: f64 = 5_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("clock went backwards by {regression_ms} ms at event {index}")]
    NonMonotonicClock { index: usize, regression_ms: f64 },
    #[error("send times must be strictly increasing")]
    UnorderedSendTimes,
    #[error("invalid key token {0:?}")]
    InvalidKey(String),
    #[error("invalid level {0}: expected -1, 0 or 1")]
    InvalidLevel(i64),
    #[error("unknown emotion category {0:?}")]
    UnknownCategory(String),
    #[error("invalid label set: {0}")]
    InvalidLabels(String),
    #[error("invalid timestamp {0}")]
    InvalidTimestamp(f64),
    #[error("message text exceeds {MAX_MESSAGE_CHARS} characters")]
    OversizeMessage,
}

/// Key identity as captured on the client. Printable characters travel
/// as-is; everything else maps onto a small closed set of named keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Char(char),
    Backspace,
    Enter,
    Shift,
    Space,
    Tab,
    CapsLock,
    ArrowUp,
    ArrowDown,
    ArrowLeft,
    ArrowRight,
    Other,
}

impl Key {
    pub fn as_token(&self) -> String {
        match self {
            Key::Char(c) => c.to_string(),
            Key::Backspace => "Backspace".into(),
            Key::Enter => "Enter".into(),
            Key::Shift => "Shift".into(),
            Key::Space => "Space".into(),
            Key::Tab => "Tab".into(),
            Key::CapsLock => "CapsLock".into(),
            Key::ArrowUp => "ArrowUp".into(),
            Key::ArrowDown => "ArrowDown".into(),
            Key::ArrowLeft => "ArrowLeft".into(),
            Key::ArrowRight => "ArrowRight".into(),
            Key::Other => "Other".into(),
        }
    }

    /// The character a key inserts into the text, if any.
    pub fn printable(&self) -> Option<char> {
        match self {
            Key::Char(c) => Some(*c),
            Key::Space => Some(' '),
            _ => None,
        }
    }
}

impl FromStr for Key {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (None, _) => Err(ModelError::InvalidKey(s.to_string())),
            (Some(' '), None) => Ok(Key::Space),
            (Some(c), None) if c.is_control() => Err(ModelError::InvalidKey(s.to_string())),
            (Some(c), None) => Ok(Key::Char(c)),
            _ => Ok(match s {
                "Backspace" => Key::Backspace,
                "Enter" => Key::Enter,
                "Shift" | "ShiftLeft" | "ShiftRight" => Key::Shift,
                "Space" | "Spacebar" => Key::Space,
                "Tab" => Key::Tab,
                "CapsLock" => Key::CapsLock,
                "ArrowUp" => Key::ArrowUp,
                "ArrowDown" => Key::ArrowDown,
                "ArrowLeft" => Key::ArrowLeft,
                "ArrowRight" => Key::ArrowRight,
                _ => Key::Other,
            }),
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_token())
    }
}

impl Serialize for Key {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.as_token())
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyAction {
    Press,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub session_id: String,
    pub user_id: String,
    pub key: Key,
    pub action: KeyAction,
    /// Client-monotonic milliseconds.
    pub t_ms: f64,
}

impl KeyEvent {
    pub fn new(key: Key, action: KeyAction, t_ms: f64) -> Self {
        KeyEvent {
            session_id: String::new(),
            user_id: String::new(),
            key,
            action,
            t_ms,
        }
    }

    pub fn press(key: Key, t_ms: f64) -> Self {
        Self::new(key, KeyAction::Press, t_ms)
    }

    pub fn release(key: Key, t_ms: f64) -> Self {
        Self::new(key, KeyAction::Release, t_ms)
    }

    pub fn is_press(&self) -> bool {
        self.action == KeyAction::Press
    }
}

/// Participant role. Only clients and responders author messages; a
/// supervisor observes emotion updates read-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Responder,
    Supervisor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Client => "client",
            Role::Responder => "responder",
            Role::Supervisor => "supervisor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub message_id: String,
    pub session_id: String,
    pub sender_role: Role,
    pub text: String,
    /// Server wall clock, milliseconds since the Unix epoch.
    pub sent_at_ms: u64,
}

impl ChatMessage {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.chars().count() > MAX_MESSAGE_CHARS {
            return Err(ModelError::OversizeMessage);
        }
        Ok(())
    }
}

/// The seven categories, in the canonical order used for every
/// per-category vector, report column and model file in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionCategory {
    Neutral,
    Happiness,
    Sadness,
    Disgust,
    Fear,
    Surprise,
    Anger,
}

impl EmotionCategory {
    pub const ALL: [EmotionCategory; 7] = [
        EmotionCategory::Neutral,
        EmotionCategory::Happiness,
        EmotionCategory::Sadness,
        EmotionCategory::Disgust,
        EmotionCategory::Fear,
        EmotionCategory::Surprise,
        EmotionCategory::Anger,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionCategory::Neutral => "neutral",
            EmotionCategory::Happiness => "happiness",
            EmotionCategory::Sadness => "sadness",
            EmotionCategory::Disgust => "disgust",
            EmotionCategory::Fear => "fear",
            EmotionCategory::Surprise => "surprise",
            EmotionCategory::Anger => "anger",
        }
    }
}

impl fmt::Display for EmotionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ModelError::UnknownCategory(s.to_string()))
    }
}

/// A three-point ordinal rating: -1, 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Level(i8);

impl Level {
    pub const NEGATIVE: Level = Level(-1);
    pub const ZERO: Level = Level(0);
    pub const POSITIVE: Level = Level(1);

    pub fn new(v: i64) -> Result<Self, ModelError> {
        match v {
            -1..=1 => Ok(Level(v as i8)),
            _ => Err(ModelError::InvalidLevel(v)),
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Class index used by three-class models: -1 → 0, 0 → 1, 1 → 2.
    pub fn class_index(self) -> usize {
        (self.0 + 1) as usize
    }

    pub fn from_class_index(idx: usize) -> Self {
        match idx {
            0 => Level::NEGATIVE,
            1 => Level::ZERO,
            _ => Level::POSITIVE,
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.0)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        Level::new(v).map_err(serde::de::Error::custom)
    }
}

/// Up to three distinct categories, kept in canonical order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<EmotionCategory>);

impl LabelSet {
    pub const MAX: usize = 3;

    pub fn new(labels: impl IntoIterator<Item = EmotionCategory>) -> Result<Self, ModelError> {
        let mut v: Vec<EmotionCategory> = labels.into_iter().collect();
        let n = v.len();
        v.sort();
        v.dedup();
        if v.len() != n {
            return Err(ModelError::InvalidLabels("duplicate label".into()));
        }
        if v.len() > Self::MAX {
            return Err(ModelError::InvalidLabels(format!("{} labels, at most 3 allowed", n)));
        }
        Ok(LabelSet(v))
    }

    pub fn single(c: EmotionCategory) -> Self {
        LabelSet(vec![c])
    }

    pub fn contains(&self, c: EmotionCategory) -> bool {
        self.0.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = EmotionCategory> + '_ {
        self.0.iter().copied()
    }

    /// 0/1 indicator per category in canonical order.
    pub fn indicators(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        for c in &self.0 {
            out[c.index()] = 1.0;
        }
        out
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Vec::<EmotionCategory>::deserialize(deserializer)?;
        LabelSet::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAnnotation {
    pub message_id: String,
    pub valence: Level,
    pub arousal: Level,
    pub labels: LabelSet,
    pub annotator_id: String,
}

impl EmotionAnnotation {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.labels.is_empty() {
            return Err(ModelError::InvalidLabels("annotation needs at least one label".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLevel {
    pub value: Level,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: EmotionCategory,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    Kd,
    Text,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionPrediction {
    pub message_id: String,
    pub valence: ScoredLevel,
    pub arousal: ScoredLevel,
    /// Sorted by confidence, highest first.
    pub labels: Vec<ScoredLabel>,
    pub source: PredictionSource,
    /// Set when some stage fell back to a weaker input.
    #[serde(default)]
    pub degraded: bool,
}

impl EmotionPrediction {
    pub fn validate(&self) -> Result<(), ModelError> {
        let in_unit = |c: f64| (0.0..=1.0).contains(&c);
        if !in_unit(self.valence.confidence) || !in_unit(self.arousal.confidence) {
            return Err(ModelError::InvalidLabels("confidence outside [0, 1]".into()));
        }
        if self.labels.len() > LabelSet::MAX {
            return Err(ModelError::InvalidLabels("more than three labels".into()));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if !in_unit(l.confidence) {
                return Err(ModelError::InvalidLabels("confidence outside [0, 1]".into()));
            }
            if self.labels[..i].iter().any(|o| o.label == l.label) {
                return Err(ModelError::InvalidLabels("duplicate label".into()));
            }
            if i > 0 && self.labels[i - 1].confidence < l.confidence {
                return Err(ModelError::InvalidLabels("labels not sorted by confidence".into()));
            }
        }
        Ok(())
    }
}

/// Events that make up the composition of one message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageEventWindow {
    pub message_id: String,
    pub events: Vec<KeyEvent>,
}

impl MessageEventWindow {
    pub fn press_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_press()).count()
    }
}

/// A time-ordered stream in which every release has a preceding press and
/// every press is eventually released.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidatedStream {
    pub events: Vec<KeyEvent>,
    /// Releases dropped because no matching press preceded them.
    pub orphan_releases: usize,
    /// Presses still held at the end of the stream, closed with zero dwell.
    pub closed_presses: usize,
}

/// Sorts a raw event stream by timestamp, drops orphan releases and closes
/// presses that were never released.
pub fn validate_event_stream(events: Vec<KeyEvent>) -> Result<ValidatedStream, ModelError> {
    let mut high_water = f64::NEG_INFINITY;
    for (index, e) in events.iter().enumerate() {
        if !e.t_ms.is_finite() || e.t_ms < 0.0 {
            return Err(ModelError::InvalidTimestamp(e.t_ms));
        }
        if e.t_ms < high_water - CLOCK_RESET_THRESHOLD_MS {
            return Err(ModelError::NonMonotonicClock {
                index,
                regression_ms: high_water - e.t_ms,
            });
        }
        high_water = high_water.max(e.t_ms);
    }

    let mut sorted = events;
    // Vec::sort_by is stable.
    sorted.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));

    let mut open: HashMap<Key, usize> = HashMap::new();
    let mut kept: Vec<KeyEvent> = Vec::with_capacity(sorted.len());
    let mut orphan_releases = 0;
    for e in sorted {
        match e.action {
            KeyAction::Press => {
                *open.entry(e.key.clone()).or_default() += 1;
                kept.push(e);
            }
            KeyAction::Release => match open.get_mut(&e.key) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    kept.push(e);
                }
                _ => orphan_releases += 1,
            },
        }
    }

    // With FIFO pairing the unreleased presses of a key are its last ones.
    // Each gets a synthetic release at its own timestamp (zero dwell).
    let dangling: HashMap<Key, usize> = open.into_iter().filter(|(_, n)| *n > 0).collect();
    let mut closed_presses = 0;
    if !dangling.is_empty() {
        let mut presses_left: HashMap<&Key, usize> = HashMap::new();
        for e in kept.iter().filter(|e| e.is_press()) {
            *presses_left.entry(&e.key).or_default() += 1;
        }
        let mut close_at = vec![false; kept.len()];
        for (i, e) in kept.iter().enumerate().filter(|(_, e)| e.is_press()) {
            let left = presses_left.get_mut(&e.key).expect("counted above");
            *left -= 1;
            close_at[i] = *left < dangling.get(&e.key).copied().unwrap_or(0);
        }
        let mut out = Vec::with_capacity(kept.len() + close_at.len());
        for (e, close) in kept.into_iter().zip(close_at) {
            let synthetic = close.then(|| KeyEvent {
                action: KeyAction::Release,
                ..e.clone()
            });
            out.push(e);
            if let Some(r) = synthetic {
                closed_presses += 1;
                out.push(r);
            }
        }
        kept = out;
    }

    Ok(ValidatedStream {
        events: kept,
        orphan_releases,
        closed_presses,
    })
}

/// Result of splitting a validated stream at message send times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub windows: Vec<MessageEventWindow>,
    /// Events typed after the last send, held for the next message.
    pub held: Vec<KeyEvent>,
}

/// Assigns every event to the earliest message sent at or after it.
///
/// Releases follow their matching press, so the Enter key that triggers a
/// send stays with the message it sent even when it is released after the
/// send time.
pub fn segment_by_message(
    stream: &ValidatedStream,
    send_times: &[(String, f64)],
) -> Result<Segmentation, ModelError> {
    if send_times.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Err(ModelError::UnorderedSendTimes);
    }
    let window_for = |t: f64| send_times.partition_point(|(_, s)| *s < t);

    let mut buckets: Vec<Vec<KeyEvent>> = vec![Vec::new(); send_times.len() + 1];
    let mut open: HashMap<Key, VecDeque<usize>> = HashMap::new();
    for e in &stream.events {
        let idx = match e.action {
            KeyAction::Press => {
                let idx = window_for(e.t_ms);
                open.entry(e.key.clone()).or_default().push_back(idx);
                idx
            }
            KeyAction::Release => open
                .get_mut(&e.key)
                .and_then(|q| q.pop_front())
                .unwrap_or_else(|| window_for(e.t_ms)),
        };
        buckets[idx].push(e.clone());
    }

    let held = buckets.pop().unwrap_or_default();
    let windows = send_times
        .iter()
        .zip(buckets)
        .map(|((id, _), events)| MessageEventWindow {
            message_id: id.clone(),
            events,
        })
        .collect();
    Ok(Segmentation { windows, held })
}
