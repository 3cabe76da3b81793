//! Newline-delimited JSON corpus files: one chat message per line with its
//! keystroke events and, optionally, precomputed features and a gold label.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_feature_row, FeatureRow};
use crate::fusion::LabeledRow;
use crate::model::{
    validate_event_stream, ChatMessage, EmotionAnnotation, Key, KeyAction, KeyEvent,
    MessageEventWindow, ModelError,
};
use crate::text::{redact_pii, ConversationContext, LexiconAnalyzer};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("message {message_id}: {source}")]
    Invalid {
        message_id: String,
        #[source]
        source: ModelError,
    },
}

/// A key event without its session/user envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub key: Key,
    pub action: KeyAction,
    pub t_ms: f64,
}

impl From<&KeyEvent> for EventRecord {
    fn from(e: &KeyEvent) -> Self {
        EventRecord {
            key: e.key.clone(),
            action: e.action,
            t_ms: e.t_ms,
        }
    }
}

fn default_user() -> String {
    "client".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default = "default_user")]
    pub user_id: String,
    pub message: ChatMessage,
    /// Keystrokes that composed `message`, including the sending Enter.
    #[serde(default)]
    pub events: Vec<EventRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<EmotionAnnotation>,
}

impl CorpusRecord {
    pub fn key_events(&self) -> Vec<KeyEvent> {
        self.events
            .iter()
            .map(|e| KeyEvent {
                session_id: self.message.session_id.clone(),
                user_id: self.user_id.clone(),
                key: e.key.clone(),
                action: e.action,
                t_ms: e.t_ms,
            })
            .collect()
    }

    fn invalid(&self, source: ModelError) -> CorpusError {
        CorpusError::Invalid {
            message_id: self.message.message_id.clone(),
            source,
        }
    }

    /// Validated keystroke window for this message.
    pub fn window(&self) -> Result<MessageEventWindow, CorpusError> {
        let stream = validate_event_stream(self.key_events()).map_err(|e| self.invalid(e))?;
        Ok(MessageEventWindow {
            message_id: self.message.message_id.clone(),
            events: stream.events,
        })
    }

    /// Stored features if present, otherwise computed from the events.
    pub fn feature_row(&self, pause_threshold_ms: f64) -> Result<FeatureRow, CorpusError> {
        if let Some(f) = &self.features {
            return Ok(f.clone());
        }
        Ok(build_feature_row(&self.message, &self.window()?, pause_threshold_ms))
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<(), CorpusError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>, CorpusError> {
    let records: Vec<CorpusRecord> = read_lines(reader)?;
    for r in &records {
        r.message.validate().map_err(|e| r.invalid(e))?;
        if let Some(g) = &r.gold {
            g.validate().map_err(|e| r.invalid(e))?;
        }
    }
    Ok(records)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}

pub fn write_corpus(writer: impl Write, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    write_lines(writer, records)
}

pub fn write_corpus_file(path: &Path, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    write_corpus(BufWriter::new(File::create(path)?), records)
}

pub fn read_annotations(reader: impl BufRead) -> Result<Vec<EmotionAnnotation>, CorpusError> {
    let anns: Vec<EmotionAnnotation> = read_lines(reader)?;
    for a in &anns {
        a.validate().map_err(|e| CorpusError::Invalid {
            message_id: a.message_id.clone(),
            source: e,
        })?;
    }
    Ok(anns)
}

pub fn read_annotations_file(path: &Path) -> Result<Vec<EmotionAnnotation>, CorpusError> {
    read_annotations(BufReader::new(File::open(path)?))
}

pub fn write_annotations_file(path: &Path, anns: &[EmotionAnnotation]) -> Result<(), CorpusError> {
    write_lines(BufWriter::new(File::create(path)?), anns)
}

/// Featurizes every record and scores its text with the lexicon analyzer,
/// using the earlier messages of the same session as context. Text is
/// redacted before analysis.
pub fn label_records(
    records: &[CorpusRecord],
    pause_threshold_ms: f64,
) -> Result<Vec<LabeledRow>, CorpusError> {
    let analyzer = LexiconAnalyzer::new();
    let mut contexts: HashMap<&str, ConversationContext> = HashMap::new();
    records
        .iter()
        .map(|r| {
            let features = r.feature_row(pause_threshold_ms)?;
            let ctx = contexts.entry(r.message.session_id.as_str()).or_default();
            let text = redact_pii(&r.message.text);
            let emotion = analyzer.score(ctx, &text);
            ctx.push(r.message.sender_role, text);
            Ok(LabeledRow {
                features,
                text: emotion,
                gold: r.gold.clone(),
            })
        })
        .collect()
}
