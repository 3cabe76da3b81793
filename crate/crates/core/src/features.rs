//! Keystroke and content features: the canonical 33-dimensional row.
//!
//! Column order is fixed and matches [`feature_names`]; CSV exports and model
//! files depend on it. See `docs/feature-dictionary.md`.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{ChatMessage, Key, KeyAction, KeyEvent, MessageEventWindow};

pub const DEFAULT_PAUSE_THRESHOLD_MS: f64 = 1_000.0;

pub const KD_DIM: usize = 20;
pub const CONTENT_DIM: usize = 13;
pub const FEATURE_DIM: usize = KD_DIM + CONTENT_DIM;

pub const KD_FEATURE_NAMES: [&str; KD_DIM] = [
    "dwell_mean",
    "dwell_std",
    "dwell_min",
    "dwell_max",
    "dwell_median",
    "flight_mean",
    "flight_std",
    "flight_min",
    "flight_max",
    "flight_median",
    "downdown_mean",
    "downdown_std",
    "duration_s",
    "keys_per_second",
    "key_count",
    "backspace_count",
    "backspace_ratio",
    "enter_count",
    "pause_count",
    "longest_pause_ms",
];

pub const CONTENT_FEATURE_NAMES: [&str; CONTENT_DIM] = [
    "char_count",
    "word_count",
    "sentence_count",
    "mean_word_length",
    "punct_count",
    "punct_ratio",
    "exclam_count",
    "question_count",
    "ellipsis_count",
    "uppercase_ratio",
    "allcaps_word_count",
    "first_char_capitalized",
    "repeated_char_run_count",
];

/// All 33 names, keystroke block first.
pub fn feature_names() -> Vec<&'static str> {
    KD_FEATURE_NAMES
        .iter()
        .chain(CONTENT_FEATURE_NAMES.iter())
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeFeatureVector {
    pub dwell_mean: f64,
    pub dwell_std: f64,
    pub dwell_min: f64,
    pub dwell_max: f64,
    pub dwell_median: f64,
    pub flight_mean: f64,
    pub flight_std: f64,
    pub flight_min: f64,
    pub flight_max: f64,
    pub flight_median: f64,
    pub downdown_mean: f64,
    pub downdown_std: f64,
    pub duration_s: f64,
    pub keys_per_second: f64,
    pub key_count: f64,
    pub backspace_count: f64,
    pub backspace_ratio: f64,
    pub enter_count: f64,
    pub pause_count: f64,
    pub longest_pause_ms: f64,
}

impl KeystrokeFeatureVector {
    pub fn to_array(&self) -> [f64; KD_DIM] {
        [
            self.dwell_mean,
            self.dwell_std,
            self.dwell_min,
            self.dwell_max,
            self.dwell_median,
            self.flight_mean,
            self.flight_std,
            self.flight_min,
            self.flight_max,
            self.flight_median,
            self.downdown_mean,
            self.downdown_std,
            self.duration_s,
            self.keys_per_second,
            self.key_count,
            self.backspace_count,
            self.backspace_ratio,
            self.enter_count,
            self.pause_count,
            self.longest_pause_ms,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContentFeatureVector {
    pub char_count: f64,
    pub word_count: f64,
    pub sentence_count: f64,
    pub mean_word_length: f64,
    pub punct_count: f64,
    pub punct_ratio: f64,
    pub exclam_count: f64,
    pub question_count: f64,
    pub ellipsis_count: f64,
    pub uppercase_ratio: f64,
    pub allcaps_word_count: f64,
    pub first_char_capitalized: f64,
    pub repeated_char_run_count: f64,
}

impl ContentFeatureVector {
    pub fn to_array(&self) -> [f64; CONTENT_DIM] {
        [
            self.char_count,
            self.word_count,
            self.sentence_count,
            self.mean_word_length,
            self.punct_count,
            self.punct_ratio,
            self.exclam_count,
            self.question_count,
            self.ellipsis_count,
            self.uppercase_ratio,
            self.allcaps_word_count,
            self.first_char_capitalized,
            self.repeated_char_run_count,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub message_id: String,
    pub kd: KeystrokeFeatureVector,
    pub content: ContentFeatureVector,
    /// True iff the window held at least two key presses.
    pub kd_valid: bool,
}

impl FeatureRow {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&self.kd.to_array());
        v.extend_from_slice(&self.content.to_array());
        v
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Summary {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    median: f64,
}

/// Population statistics; all zero for an empty sample.
fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    Summary {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median,
    }
}

/// A press paired with its release.
#[derive(Debug, Clone)]
struct Stroke {
    key: Key,
    down: f64,
    up: f64,
}

/// Pairs presses and releases FIFO per key. Events are put in a canonical
/// order first so that the result does not depend on how events sharing a
/// timestamp were interleaved.
fn pair_strokes(events: &[KeyEvent]) -> Vec<Stroke> {
    let mut ordered: Vec<&KeyEvent> = events.iter().collect();
    ordered.sort_by(|a, b| {
        a.t_ms
            .total_cmp(&b.t_ms)
            .then(a.action.cmp(&b.action))
            .then_with(|| a.key.cmp(&b.key))
    });

    let mut strokes: Vec<Stroke> = Vec::new();
    let mut open: HashMap<&Key, VecDeque<usize>> = HashMap::new();
    for e in ordered {
        match e.action {
            KeyAction::Press => {
                open.entry(&e.key).or_default().push_back(strokes.len());
                strokes.push(Stroke {
                    key: e.key.clone(),
                    down: e.t_ms,
                    up: e.t_ms,
                });
            }
            KeyAction::Release => {
                if let Some(i) = open.get_mut(&e.key).and_then(|q| q.pop_front()) {
                    strokes[i].up = e.t_ms;
                }
            }
        }
    }
    strokes.sort_by(|a, b| {
        a.down
            .total_cmp(&b.down)
            .then(a.up.total_cmp(&b.up))
            .then_with(|| a.key.cmp(&b.key))
    });
    strokes
}

pub fn extract_keystroke_features(
    window: &MessageEventWindow,
    pause_threshold_ms: f64,
) -> KeystrokeFeatureVector {
    let strokes = pair_strokes(&window.events);
    if strokes.is_empty() {
        return KeystrokeFeatureVector::default();
    }

    let dwell: Vec<f64> = strokes.iter().map(|s| s.up - s.down).collect();
    let flight: Vec<f64> = strokes.windows(2).map(|w| w[1].down - w[0].up).collect();
    let downdown: Vec<f64> = strokes.windows(2).map(|w| w[1].down - w[0].down).collect();

    let first_press = strokes[0].down;
    let last_event = window
        .events
        .iter()
        .map(|e| e.t_ms)
        .fold(first_press, f64::max);
    let duration_s = (last_event - first_press) / 1000.0;

    let key_count = strokes.len() as f64;
    let backspace_count = strokes.iter().filter(|s| s.key == Key::Backspace).count() as f64;
    let enter_count = strokes.iter().filter(|s| s.key == Key::Enter).count() as f64;
    let pauses: Vec<f64> = flight
        .iter()
        .copied()
        .filter(|f| *f > pause_threshold_ms)
        .collect();

    let d = summarize(&dwell);
    let f = summarize(&flight);
    let dd = summarize(&downdown);
    KeystrokeFeatureVector {
        dwell_mean: d.mean,
        dwell_std: d.std,
        dwell_min: d.min,
        dwell_max: d.max,
        dwell_median: d.median,
        flight_mean: f.mean,
        flight_std: f.std,
        flight_min: f.min,
        flight_max: f.max,
        flight_median: f.median,
        downdown_mean: dd.mean,
        downdown_std: dd.std,
        duration_s,
        keys_per_second: if duration_s > 0.0 { key_count / duration_s } else { 0.0 },
        key_count,
        backspace_count,
        backspace_ratio: backspace_count / key_count,
        enter_count,
        pause_count: pauses.len() as f64,
        longest_pause_ms: pauses.iter().copied().fold(0.0, f64::max),
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '…' | '‘' | '’' | '“' | '”' | '–' | '—' | '¡' | '¿')
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

/// Counts "..." (any run of three or more dots) and the Unicode ellipsis.
fn count_ellipses(text: &str) -> usize {
    let mut count = 0;
    let mut dots = 0;
    for c in text.chars() {
        if c == '.' {
            dots += 1;
            continue;
        }
        if dots >= 3 {
            count += 1;
        }
        dots = 0;
        if c == '…' {
            count += 1;
        }
    }
    if dots >= 3 {
        count += 1;
    }
    count
}

/// Runs of three or more identical letters, e.g. the "ooo" in "sooo".
fn count_repeated_runs(text: &str) -> usize {
    let mut count = 0;
    let mut prev: Option<char> = None;
    let mut run = 0;
    for c in text.chars() {
        if c.is_alphabetic() && Some(c) == prev {
            run += 1;
            if run == 3 {
                count += 1;
            }
        } else {
            run = 1;
        }
        prev = Some(c).filter(|c| c.is_alphabetic());
    }
    count
}

pub fn extract_content_features(text: &str) -> ContentFeatureVector {
    let char_count = text.chars().count();
    let words: Vec<&str> = text.split_whitespace().collect();
    let word_lengths: Vec<usize> = words
        .iter()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).count())
        .collect();
    let sentence_count = text
        .split(is_terminator)
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count();

    let punct_count = text.chars().filter(|c| is_punct(*c)).count();
    let letters = text.chars().filter(|c| c.is_alphabetic()).count();
    let uppercase = text.chars().filter(|c| c.is_uppercase()).count();
    let allcaps_word_count = words
        .iter()
        .filter(|w| {
            let letters: Vec<char> = w.chars().filter(|c| c.is_alphabetic()).collect();
            letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase())
        })
        .count();
    let first_char_capitalized = text
        .trim_start()
        .chars()
        .next()
        .is_some_and(char::is_uppercase);

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    ContentFeatureVector {
        char_count: char_count as f64,
        word_count: words.len() as f64,
        sentence_count: sentence_count as f64,
        mean_word_length: ratio(word_lengths.iter().sum(), words.len()),
        punct_count: punct_count as f64,
        punct_ratio: ratio(punct_count, char_count),
        exclam_count: text.matches('!').count() as f64,
        question_count: text.matches('?').count() as f64,
        ellipsis_count: count_ellipses(text) as f64,
        uppercase_ratio: ratio(uppercase, letters),
        allcaps_word_count: allcaps_word_count as f64,
        first_char_capitalized: if first_char_capitalized { 1.0 } else { 0.0 },
        repeated_char_run_count: count_repeated_runs(text) as f64,
    }
}

pub fn build_feature_row(
    message: &ChatMessage,
    window: &MessageEventWindow,
    pause_threshold_ms: f64,
) -> FeatureRow {
    let kd_valid = window.press_count() >= 2;
    let kd = if kd_valid {
        extract_keystroke_features(window, pause_threshold_ms)
    } else {
        KeystrokeFeatureVector::default()
    };
    FeatureRow {
        message_id: message.message_id.clone(),
        kd,
        content: extract_content_features(&message.text),
        kd_valid,
    }
}

/// CSV header for feature exports: id, validity flag, then the 33 columns.
pub fn csv_header() -> String {
    let mut cols = vec!["message_id", "kd_valid"];
    cols.extend(feature_names());
    cols.join(",")
}

pub fn csv_line(row: &FeatureRow) -> String {
    let mut out = String::new();
    // ids are generated or client-chosen; quote defensively when needed
    if row.message_id.contains([',', '"', '\n']) {
        out.push('"');
        out.push_str(&row.message_id.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(&row.message_id);
    }
    out.push(',');
    out.push_str(if row.kd_valid { "1" } else { "0" });
    for v in row.to_vec() {
        out.push(',');
        out.push_str(&v.to_string());
    }
    out
}
