//! Remote LLM analyzer over a pluggable transport, and the fallback wrapper
//! that substitutes the lexicon analyzer when the primary fails.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use keysense_core::model::Role;
use keysense_core::text::{
    build_remote_request, parse_remote_response, AnalyzerError, ConversationContext,
    LexiconAnalyzer, RequestPayload, TextAnalyzer, TextEmotion,
};
use tokio::sync::Semaphore;

use crate::config::{AnalyzerMode, AnalyzerSection};

/// Sends one request body and returns the raw response body.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, payload: &RequestPayload) -> Result<Vec<u8>, AnalyzerError>;
}

/// HTTPS JSON transport for chat-completions style endpoints.
pub struct HttpTransport {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, AnalyzerError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AnalyzerError::Unavailable(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, payload: &RequestPayload) -> Result<Vec<u8>, AnalyzerError> {
        let mut req = self.client.post(&self.endpoint).json(payload);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| AnalyzerError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(AnalyzerError::Unavailable(format!("HTTP {}", resp.status())));
        }
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| AnalyzerError::Unavailable(e.to_string()))?;
        extract_content(&bytes)
    }
}

/// Pulls the assistant message out of a chat-completions envelope; bodies
/// that are not such an envelope are returned unchanged.
pub fn extract_content(body: &[u8]) -> Result<Vec<u8>, AnalyzerError> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| AnalyzerError::Parse(e.to_string()))?;
    match value.pointer("/choices/0/message/content") {
        Some(serde_json::Value::String(s)) => Ok(s.as_bytes().to_vec()),
        Some(_) => Err(AnalyzerError::Parse("non-string message content".into())),
        None => Ok(body.to_vec()),
    }
}

/// LLM analyzer: renders the prompt, bounds concurrent requests and parses
/// the strict JSON answer.
pub struct RemoteAnalyzer<T> {
    transport: T,
    model: String,
    permits: Semaphore,
}

impl<T: Transport> RemoteAnalyzer<T> {
    pub fn new(transport: T, model: impl Into<String>, max_in_flight: usize) -> Self {
        RemoteAnalyzer {
            transport,
            model: model.into(),
            permits: Semaphore::new(max_in_flight.max(1)),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

#[async_trait]
impl<T: Transport> TextAnalyzer for RemoteAnalyzer<T> {
    async fn analyze(
        &self,
        context: &ConversationContext,
        sender: Role,
        text: &str,
    ) -> Result<TextEmotion, AnalyzerError> {
        let payload = build_remote_request(&self.model, context, sender, text);
        let body = {
            let _permit = self
                .permits
                .acquire()
                .await
                .map_err(|e| AnalyzerError::Unavailable(e.to_string()))?;
            self.transport.send(&payload).await?
        };
        parse_remote_response(&body)
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

/// Result of an analysis that may have fallen back to the lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub emotion: TextEmotion,
    pub degraded: bool,
}

/// Primary analyzer with automatic lexicon fallback.
#[derive(Clone)]
pub struct FallbackAnalyzer {
    primary: Arc<dyn TextAnalyzer>,
    lexicon: LexiconAnalyzer,
}

impl FallbackAnalyzer {
    pub fn new(primary: Arc<dyn TextAnalyzer>) -> Self {
        FallbackAnalyzer {
            primary,
            lexicon: LexiconAnalyzer::new(),
        }
    }

    pub fn lexicon() -> Self {
        FallbackAnalyzer::new(Arc::new(LexiconAnalyzer::new()))
    }

    pub fn primary_name(&self) -> &'static str {
        self.primary.name()
    }

    pub async fn analyze(&self, context: &ConversationContext, sender: Role, text: &str) -> Analysis {
        match self.primary.analyze(context, sender, text).await {
            Ok(emotion) if emotion.is_valid() => Analysis {
                emotion,
                degraded: false,
            },
            Ok(_) => {
                log::warn!("{} analyzer returned an invalid emotion; using lexicon", self.primary.name());
                self.fallback(context, text)
            }
            Err(e) => {
                log::warn!("{} analyzer failed ({e}); using lexicon", self.primary.name());
                self.fallback(context, text)
            }
        }
    }

    fn fallback(&self, context: &ConversationContext, text: &str) -> Analysis {
        Analysis {
            emotion: self.lexicon.score(context, text),
            degraded: true,
        }
    }
}

/// Analyzer selected by configuration. The API key is read from the
/// configured environment variable.
pub fn build_analyzer(section: &AnalyzerSection) -> Result<FallbackAnalyzer, AnalyzerError> {
    match section.mode {
        AnalyzerMode::Lexicon => Ok(FallbackAnalyzer::lexicon()),
        AnalyzerMode::Remote => {
            let key = std::env::var(&section.api_key_env).ok();
            if key.is_none() {
                log::warn!("{} is not set; remote requests are unauthenticated", section.api_key_env);
            }
            let transport = HttpTransport::new(
                &section.endpoint,
                key,
                Duration::from_millis(section.timeout_ms),
            )?;
            Ok(FallbackAnalyzer::new(Arc::new(RemoteAnalyzer::new(
                transport,
                section.model.clone(),
                section.max_in_flight,
            ))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_unwrapping() {
        let env = br#"{"choices":[{"message":{"role":"assistant","content":"{\"valence\":1}"}}]}"#;
        assert_eq!(extract_content(env).unwrap(), br#"{"valence":1}"#.to_vec());
        let bare = br#"{"valence":1,"arousal":0,"labels":[],"confidence":0.5}"#;
        assert_eq!(extract_content(bare).unwrap(), bare.to_vec());
        assert!(extract_content(b"not json").is_err());
    }
}
