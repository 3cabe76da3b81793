//! Wire frames: one JSON object per line, discriminated by `type`.

use keysense_core::model::{EmotionPrediction, Key, KeyAction, Role};
use serde::{Deserialize, Serialize};

/// Longest accepted frame line, in bytes.
pub const MAX_FRAME_BYTES: usize = 256 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Join {
        session_id: String,
        role: Role,
        user_id: String,
    },
    KeyEvent {
        key: Key,
        action: KeyAction,
        t_ms: f64,
    },
    ChatMessage {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_msg_id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    /// Acknowledges a join.
    Joined {
        session_id: String,
        role: Role,
        user_id: String,
    },
    ChatMessage {
        message_id: String,
        sender_role: Role,
        text: String,
        /// Server wall clock, ms since the Unix epoch.
        ts: u64,
    },
    EmotionUpdate(EmotionPrediction),
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadFrame,
    NotJoined,
    AlreadyJoined,
    RoleTaken,
    EmptyMessage,
    OversizeMessage,
    InvalidEvent,
    /// Supervisors observe only; they cannot type or send messages.
    NotPermitted,
}

impl ServerFrame {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerFrame::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }
}

pub fn parse_client_frame(line: &str) -> Result<ClientFrame, ServerFrame> {
    serde_json::from_str(line).map_err(|e| ServerFrame::error(ErrorCode::BadFrame, e.to_string()))
}
