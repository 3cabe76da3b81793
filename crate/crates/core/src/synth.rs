//! Seeded generator of labeled chat messages with keystroke streams.
//!
//! Each category has an [`EmotionProfile`] controlling two independent
//! signal channels:
//!
//! * typing style: keystroke timing, corrections, pauses and compositional
//!   habits (capitalisation, ellipses, elongated words, shouting);
//! * vocabulary: the emotion keyword placed in the message.
//!
//! Turning a channel off makes it independent of the gold label: the style
//! profile (or keyword category) is then drawn uniformly at random for every
//! message, so all classes see the same mixture distribution. Keyword pools
//! are length-matched across categories so that vocabulary alone never shows
//! up in keystroke counts or word lengths.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusRecord, EventRecord};
use crate::model::{
    ChatMessage, EmotionAnnotation, EmotionCategory, Key, KeyEvent, LabelSet, Level,
    MessageEventWindow, Role,
};
use crate::seed::derive_seed;

/// Fraction of each profile's distance from the across-profile mean kept in
/// hard mode.
pub const HARD_MODE_SEPARATION: f64 = 0.35;

/// Default [`EmotionProfile::dimension_spread`].
pub const DIMENSION_SPREAD: f64 = 0.15;

/// Relative change in typing rate per level of arousal above or below the
/// profile's modal level.
const AROUSAL_RATE_GAIN: f64 = 0.2;

/// Shared by every profile, so it carries no class information.
const EXCLAIM_PROB: f64 = 0.15;

const TEMPLATES: [&str; 6] = [
    "i felt {kw} watching the {topic}",
    "the {topic} left me {kw}",
    "honestly it was {kw} to see the {topic}",
    "that {topic} made me feel {kw}",
    "i am still {kw} about the {topic}",
    "seeing the {topic} was {kw}",
];

const TOPICS: [&str; 7] = ["clip", "video", "ending", "scene", "music", "story", "last part"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    pub mean: f64,
    pub std: f64,
}

impl Dist {
    pub const fn new(mean: f64, std: f64) -> Self {
        Dist { mean, std }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.std > 0.0 {
            Normal::new(self.mean, self.std)
                .expect("finite positive std")
                .sample(rng)
        } else {
            self.mean
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionProfile {
    pub category: EmotionCategory,
    pub valence: Level,
    pub arousal: Level,
    /// Per-message typing rate, keys per second.
    pub typing_rate: Dist,
    pub dwell_ms: Dist,
    /// Per-letter chance of a typo fixed with Backspace.
    pub backspace_prob: f64,
    /// Per-word chance of hesitating before typing it.
    pub pause_prob: f64,
    pub pause_ms: Dist,
    pub capitalize_prob: f64,
    pub ellipsis_prob: f64,
    pub question_prob: f64,
    /// Chance of an elongated intensifier ("sooo").
    pub elongate_prob: f64,
    /// Chance of typing the keyword in capitals.
    pub shout_prob: f64,
    /// Chance that a message's valence (and, independently, arousal) rating
    /// sits one level off the profile's modal level. Categories never vary.
    pub dimension_spread: f64,
    /// Category-typical words; every pool has the same length profile.
    pub keywords: Vec<String>,
}

impl EmotionProfile {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            self.backspace_prob,
            self.pause_prob,
            self.capitalize_prob,
            self.ellipsis_prob,
            self.question_prob,
            self.elongate_prob,
            self.shout_prob,
            self.dimension_spread,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if [self.typing_rate, self.dwell_ms, self.pause_ms]
            .iter()
            .any(|d| !(d.std > 0.0) || !(d.mean > 0.0))
        {
            return Err("distributions need positive mean and std".into());
        }
        if self.keywords.is_empty() {
            return Err("empty keyword pool".into());
        }
        Ok(())
    }

    pub fn gold_labels(&self) -> LabelSet {
        LabelSet::single(self.category)
    }
}

fn keywords(category: EmotionCategory) -> [&'static str; 4] {
    use EmotionCategory::*;
    // lengths 5, 6, 7, 8 in every pool
    match category {
        Neutral => ["lunch", "office", "weather", "schedule"],
        Happiness => ["happy", "joyful", "awesome", "cheerful"],
        Sadness => ["tears", "lonely", "unhappy", "hopeless"],
        Disgust => ["nasty", "filthy", "disgust", "repulsed"],
        Fear => ["scary", "afraid", "anxious", "dreading"],
        Surprise => ["shock", "amazed", "stunned", "startled"],
        Anger => ["angry", "raging", "furious", "outraged"],
    }
}

/// Built-in profile for a category.
pub fn profile(category: EmotionCategory) -> EmotionProfile {
    use EmotionCategory::*;
    #[rustfmt::skip]
    let (v, a, rate, dwell, bs, pause, pause_ms, cap, ell, q, elong, shout) = match category {
        Neutral   => (0, -1, (5.0, 0.5), (95.0, 12.0), 0.02, 0.05, (1500.0, 300.0), 0.9, 0.0, 0.1, 0.0, 0.0),
        Happiness => (1, 1, (6.5, 0.5), (80.0, 10.0), 0.04, 0.03, (1300.0, 250.0), 0.3, 0.0, 0.0, 0.8, 0.1),
        Sadness   => (-1, -1, (2.5, 0.4), (140.0, 15.0), 0.10, 0.40, (2500.0, 500.0), 0.1, 0.8, 0.05, 0.1, 0.0),
        Disgust   => (-1, 0, (4.0, 0.4), (115.0, 12.0), 0.06, 0.15, (1800.0, 300.0), 0.5, 0.2, 0.3, 0.5, 0.2),
        Fear      => (-1, 1, (5.5, 0.5), (105.0, 12.0), 0.22, 0.25, (1600.0, 300.0), 0.2, 0.5, 0.6, 0.0, 0.0),
        Surprise  => (0, 1, (7.0, 0.5), (75.0, 10.0), 0.05, 0.05, (1200.0, 250.0), 0.6, 0.0, 0.7, 0.5, 0.4),
        Anger     => (-1, 1, (8.5, 0.6), (65.0, 8.0), 0.15, 0.02, (1200.0, 250.0), 0.8, 0.0, 0.0, 0.2, 0.8),
    };
    EmotionProfile {
        category,
        valence: Level::new(v).expect("valid level"),
        arousal: Level::new(a).expect("valid level"),
        typing_rate: Dist::new(rate.0, rate.1),
        dwell_ms: Dist::new(dwell.0, dwell.1),
        backspace_prob: bs,
        pause_prob: pause,
        pause_ms: Dist::new(pause_ms.0, pause_ms.1),
        capitalize_prob: cap,
        ellipsis_prob: ell,
        question_prob: q,
        elongate_prob: elong,
        shout_prob: shout,
        dimension_spread: DIMENSION_SPREAD,
        keywords: keywords(category).iter().map(|s| s.to_string()).collect(),
    }
}

/// All seven built-in profiles, optionally pulled toward their common mean.
pub fn profiles(hard: bool) -> Vec<EmotionProfile> {
    let base: Vec<EmotionProfile> = EmotionCategory::ALL.into_iter().map(profile).collect();
    if !hard {
        return base;
    }
    let n = base.len() as f64;
    let mean = |f: fn(&EmotionProfile) -> f64| base.iter().map(f).sum::<f64>() / n;
    let shrink = |v: f64, m: f64| m + (v - m) * HARD_MODE_SEPARATION;
    let m_rate = mean(|p| p.typing_rate.mean);
    let m_dwell = mean(|p| p.dwell_ms.mean);
    let m_bs = mean(|p| p.backspace_prob);
    let m_pause = mean(|p| p.pause_prob);
    let m_pause_ms = mean(|p| p.pause_ms.mean);
    let m_cap = mean(|p| p.capitalize_prob);
    let m_ell = mean(|p| p.ellipsis_prob);
    let m_q = mean(|p| p.question_prob);
    let m_el = mean(|p| p.elongate_prob);
    let m_sh = mean(|p| p.shout_prob);
    base.into_iter()
        .map(|p| EmotionProfile {
            typing_rate: Dist::new(shrink(p.typing_rate.mean, m_rate), p.typing_rate.std),
            dwell_ms: Dist::new(shrink(p.dwell_ms.mean, m_dwell), p.dwell_ms.std),
            backspace_prob: shrink(p.backspace_prob, m_bs),
            pause_prob: shrink(p.pause_prob, m_pause),
            pause_ms: Dist::new(shrink(p.pause_ms.mean, m_pause_ms), p.pause_ms.std),
            capitalize_prob: shrink(p.capitalize_prob, m_cap),
            ellipsis_prob: shrink(p.ellipsis_prob, m_ell),
            question_prob: shrink(p.question_prob, m_q),
            elongate_prob: shrink(p.elongate_prob, m_el),
            shout_prob: shrink(p.shout_prob, m_sh),
            ..p
        })
        .collect()
}

/// The modal level, or with probability `spread` an adjacent one.
fn spread_level(modal: Level, spread: f64, rng: &mut impl Rng) -> Level {
    if !rng.random_bool(spread) {
        return modal;
    }
    let v = match modal.value() {
        0 => if rng.random_bool(0.5) { 1 } else { -1 },
        _ => 0,
    };
    Level::new(v).expect("valid level")
}

fn compose_text(style: &EmotionProfile, keyword: &str, rng: &mut impl Rng) -> String {
    let template = TEMPLATES.choose(rng).expect("non-empty");
    let topic = TOPICS.choose(rng).expect("non-empty");
    let mut kw = keyword.to_string();
    if rng.random_bool(style.shout_prob) {
        kw = kw.to_uppercase();
    }
    if rng.random_bool(style.elongate_prob) {
        kw = format!("sooo {kw}");
    }
    let mut text = template.replace("{kw}", &kw).replace("{topic}", topic);
    if rng.random_bool(style.capitalize_prob) {
        let mut chars = text.chars();
        if let Some(first) = chars.next() {
            text = first.to_uppercase().chain(chars).collect();
        }
    }
    if rng.random_bool(style.ellipsis_prob) {
        text.push_str("...");
    } else if rng.random_bool(style.question_prob) {
        text.push('?');
    } else if rng.random_bool(EXCLAIM_PROB) {
        text.push('!');
    } else if rng.random_bool(0.5) {
        text.push('.');
    }
    text
}

struct Typist<'a, R: Rng> {
    style: &'a EmotionProfile,
    rng: &'a mut R,
    rate: f64,
    t: f64,
    events: Vec<KeyEvent>,
}

impl<R: Rng> Typist<'_, R> {
    fn interval(&mut self) -> f64 {
        let mean = 1000.0 / self.rate;
        Dist::new(mean, mean * 0.25).sample(self.rng).max(20.0)
    }

    fn dwell(&mut self) -> f64 {
        self.style.dwell_ms.sample(self.rng).max(15.0)
    }

    /// Press and release one key, then advance to the next press time.
    fn stroke(&mut self, key: Key) {
        let dwell = self.dwell();
        let shift = matches!(key, Key::Char(c) if c.is_uppercase());
        if shift {
            self.events.push(KeyEvent::press(Key::Shift, self.t));
            self.t += 30.0;
        }
        self.events.push(KeyEvent::press(key.clone(), self.t));
        self.events.push(KeyEvent::release(key, self.t + dwell));
        if shift {
            self.events.push(KeyEvent::release(Key::Shift, self.t + dwell + 10.0));
        }
        self.t += self.interval();
    }

    fn type_text(&mut self, text: &str) {
        let mut word_start = true;
        for c in text.chars() {
            if word_start && c != ' ' && self.rng.random_bool(self.style.pause_prob) {
                self.t += self.style.pause_ms.sample(self.rng).max(0.0);
            }
            if c.is_alphabetic() && self.rng.random_bool(self.style.backspace_prob) {
                let typo = self.rng.random_range(b'a'..=b'z') as char;
                self.stroke(Key::Char(typo));
                self.stroke(Key::Backspace);
            }
            self.stroke(if c == ' ' { Key::Space } else { Key::Char(c) });
            word_start = c == ' ';
        }
    }
}

/// Text, keystrokes and gold label for one message. `style` drives typing
/// and composition, `keyword_from` the vocabulary, `gold` the annotation.
/// When `style` is the gold profile, the typing rate also follows the
/// message's sampled arousal.
fn synthesize(
    message_id: &str,
    style: &EmotionProfile,
    keyword_from: &EmotionProfile,
    gold: &EmotionProfile,
    rng: &mut impl Rng,
) -> (ChatMessage, MessageEventWindow, EmotionAnnotation) {
    let valence = spread_level(gold.valence, gold.dimension_spread, rng);
    let arousal = spread_level(gold.arousal, gold.dimension_spread, rng);
    let keyword = keyword_from.keywords.choose(rng).expect("validated pool").clone();
    let text = compose_text(style, &keyword, rng);
    let mut rate = style.typing_rate.sample(rng);
    if std::ptr::eq(style, gold) {
        let offset = (arousal.value() - gold.arousal.value()) as f64;
        rate *= 1.0 + AROUSAL_RATE_GAIN * offset;
    }
    let rate = rate.max(0.5);
    let start = rng.random_range(0.0..500.0f64).round();
    let mut typist = Typist {
        style,
        rng,
        rate,
        t: start,
        events: Vec::new(),
    };
    typist.type_text(&text);
    let send_t = typist.t;
    typist.stroke(Key::Enter);
    let mut events = typist.events;
    // browsers report sub-millisecond timestamps; keep two decimals
    for e in &mut events {
        e.t_ms = (e.t_ms * 100.0).round() / 100.0;
    }
    events.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));

    let message = ChatMessage {
        message_id: message_id.to_string(),
        session_id: "synthetic".into(),
        sender_role: Role::Client,
        text,
        sent_at_ms: send_t.round() as u64,
    };
    let annotation = EmotionAnnotation {
        message_id: message_id.to_string(),
        valence,
        arousal,
        labels: gold.gold_labels(),
        annotator_id: "gold".into(),
    };
    (
        message,
        MessageEventWindow {
            message_id: message_id.to_string(),
            events,
        },
        annotation,
    )
}

/// One message fully driven by `profile`. Deterministic per seed.
pub fn generate_message(
    profile: &EmotionProfile,
    seed: u64,
) -> (ChatMessage, MessageEventWindow, EmotionAnnotation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize(&format!("msg-{seed:016x}"), profile, profile, profile, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Messages per category, canonical category order.
    pub per_category: [usize; 7],
    pub kd_signal: bool,
    pub text_signal: bool,
    pub hard: bool,
    /// Consecutive records grouped into one conversation.
    pub session_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            per_category: [100; 7],
            kd_signal: true,
            text_signal: true,
            hard: false,
            session_size: 10,
            seed: 42,
        }
    }
}

/// Generates and shuffles a labeled corpus. Each record draws from its own
/// seed stream, so records can be produced in any order or in parallel.
pub fn generate_corpus(config: &CorpusConfig) -> Vec<CorpusRecord> {
    let profiles = profiles(config.hard);
    let mut drafts = Vec::with_capacity(config.per_category.iter().sum());
    let mut stream = 0u64;
    for (c, &count) in config.per_category.iter().enumerate() {
        for _ in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream));
            stream += 1;
            let style = if config.kd_signal {
                &profiles[c]
            } else {
                profiles.choose(&mut rng).expect("seven profiles")
            };
            let vocab = if config.text_signal {
                &profiles[c]
            } else {
                profiles.choose(&mut rng).expect("seven profiles")
            };
            drafts.push(synthesize("", style, vocab, &profiles[c], &mut rng));
        }
    }
    drafts.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX)));

    let session_size = config.session_size.max(1);
    drafts
        .into_iter()
        .enumerate()
        .map(|(i, (mut message, window, mut gold))| {
            let id = format!("m{i:05}");
            let session = format!("s{:04}", i / session_size);
            message.message_id = id.clone();
            message.session_id = session;
            message.sent_at_ms = 1_700_000_000_000 + (i as u64) * 60_000;
            gold.message_id = id;
            CorpusRecord {
                user_id: "client".into(),
                message,
                events: window.events.iter().map(EventRecord::from).collect(),
                features: None,
                gold: Some(gold),
            }
        })
        .collect()
}

/// A second-opinion annotator: each field is replaced by a uniformly random
/// value with probability `noise`.
pub fn simulate_annotator(
    gold: &[EmotionAnnotation],
    noise: f64,
    annotator_id: &str,
    seed: u64,
) -> Vec<EmotionAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = noise.clamp(0.0, 1.0);
    let level = |rng: &mut ChaCha8Rng, current: Level| {
        if rng.random_bool(noise) {
            Level::new(rng.random_range(-1..=1)).expect("in range")
        } else {
            current
        }
    };
    gold.iter()
        .map(|g| {
            let valence = level(&mut rng, g.valence);
            let arousal = level(&mut rng, g.arousal);
            let labels = if rng.random_bool(noise) {
                LabelSet::single(*EmotionCategory::ALL.choose(&mut rng).expect("seven"))
            } else {
                g.labels.clone()
            };
            EmotionAnnotation {
                message_id: g.message_id.clone(),
                valence,
                arousal,
                labels,
                annotator_id: annotator_id.to_string(),
            }
        })
        .collect()
}
