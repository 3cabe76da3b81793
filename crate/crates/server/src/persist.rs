//! Append-only per-session record logs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use keysense_core::corpus::EventRecord;
use keysense_core::features::FeatureRow;
use keysense_core::model::{EmotionPrediction, Role};
use keysense_core::seed::stream_id;
use keysense_core::text::TextEmotion;
use serde::{Deserialize, Serialize};

/// What is kept about one message. Raw keystrokes are present only when
/// research retention is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub message_id: String,
    pub sender_role: Role,
    pub user_id: String,
    pub text: String,
    pub text_redacted: bool,
    /// Server wall clock at receipt, ms since the Unix epoch.
    pub sent_at_ms: u64,
    /// Server wall clock when the prediction was made.
    pub predicted_at_ms: u64,
    pub features: FeatureRow,
    pub text_emotion: TextEmotion,
    pub prediction: EmotionPrediction,
    /// Events discarded so far because the pending buffer was full.
    pub dropped_events: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_events: Option<Vec<EventRecord>>,
}

#[derive(Debug, Clone)]
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RecordStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Log file for a session. Ids outside `[A-Za-z0-9_-]{1,64}` are hashed
    /// so they cannot escape the directory.
    pub fn path_for(&self, session_id: &str) -> PathBuf {
        let safe = !session_id.is_empty()
            && session_id.len() <= 64
            && session_id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        let name = if safe {
            session_id.to_string()
        } else {
            format!("session-{:016x}", stream_id(session_id))
        };
        self.dir.join(format!("{name}.ndjson"))
    }

    pub fn append(&self, record: &SessionRecord) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::from)?;
        line.push(b'\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_for(&record.session_id))?
            .write_all(&line)
    }

    pub fn read(&self, session_id: &str) -> std::io::Result<Vec<SessionRecord>> {
        let text = fs::read_to_string(self.path_for(session_id))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::from))
            .collect()
    }
}
