//! TOML service configuration. Every section and key is optional; unknown
//! keys are rejected so typos surface at startup.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid config value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzerMode {
    Lexicon,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    /// Raw TCP port; 0 picks a free port.
    pub port: u16,
    /// WebSocket port for browsers; disabled when absent.
    pub ws_port: Option<u16>,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            host: "127.0.0.1".into(),
            port: 7878,
            ws_port: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Suite directory used for messages it can serve (kd/fusion suites need
    /// valid keystrokes).
    pub model_path: Option<PathBuf>,
    /// Suite directory for messages the primary suite cannot serve,
    /// typically a text-only suite for pasted messages.
    pub fallback_model_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzerSection {
    pub mode: AnalyzerMode,
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for AnalyzerSection {
    fn default() -> Self {
        AnalyzerSection {
            mode: AnalyzerMode::Lexicon,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: "KEYSENSE_API_KEY".into(),
            max_in_flight: 4,
            timeout_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    /// Redact emails and phone numbers in stored text. Analyzer input is
    /// always redacted.
    pub redact: bool,
    /// Research retention: store raw key events in session records.
    pub retention: bool,
    /// Let a participant receive predictions about their own messages.
    pub show_own_emotions: bool,
}

impl Default for PrivacySection {
    fn default() -> Self {
        PrivacySection {
            redact: true,
            retention: false,
            show_own_emotions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub pause_threshold_ms: f64,
    /// Delay between a send and its featurization, so the release of the
    /// sending Enter key can arrive.
    pub grace_ms: u64,
    pub max_pending_events: usize,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            pause_threshold_ms: keysense_core::features::DEFAULT_PAUSE_THRESHOLD_MS,
            grace_ms: 150,
            max_pending_events: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersistenceSection {
    /// Directory of per-session record logs.
    pub path: PathBuf,
}

impl Default for PersistenceSection {
    fn default() -> Self {
        PersistenceSection {
            path: PathBuf::from("sessions"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerSection,
    pub model: ModelSection,
    pub analyzer: AnalyzerSection,
    pub privacy: PrivacySection,
    pub features: FeaturesSection,
    pub persistence: PersistenceSection,
}

/// Known keys per section, used to name the offending key precisely.
const SCHEMA: &[(&str, &[&str])] = &[
    ("server", &["host", "port", "ws_port"]),
    ("model", &["model_path", "fallback_model_path"]),
    (
        "analyzer",
        &["mode", "endpoint", "model", "api_key_env", "max_in_flight", "timeout_ms"],
    ),
    ("privacy", &["redact", "retention", "show_own_emotions"]),
    ("features", &["pause_threshold_ms", "grace_ms", "max_pending_events"]),
    ("persistence", &["path"]),
];

fn check_keys(table: &toml::Table) -> Result<(), ConfigError> {
    for (section, value) in table {
        let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| s == section) else {
            return Err(ConfigError::UnknownKey {
                key: section.clone(),
            });
        };
        let Some(inner) = value.as_table() else {
            return Err(ConfigError::Invalid {
                key: section.clone(),
                reason: "expected a [section]".into(),
            });
        };
        if let Some(k) = inner.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey {
                key: format!("{section}.{k}"),
            });
        }
    }
    Ok(())
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        check_keys(&table)?;
        let config: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: &str| ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        };
        if !(self.features.pause_threshold_ms > 0.0) {
            return Err(invalid("features.pause_threshold_ms", "must be positive"));
        }
        if self.features.max_pending_events == 0 {
            return Err(invalid("features.max_pending_events", "must be positive"));
        }
        if self.analyzer.max_in_flight == 0 {
            return Err(invalid("analyzer.max_in_flight", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_only_gets_defaults() {
        let c = Config::parse("[server]\nport = 9000\n").unwrap();
        assert_eq!(c.server.port, 9000);
        assert_eq!(c.server.host, "127.0.0.1");
        assert_eq!(c.analyzer.mode, AnalyzerMode::Lexicon);
        assert!(c.privacy.redact);
        assert!(!c.privacy.retention);
        assert!(!c.privacy.show_own_emotions);
        assert_eq!(c.features.max_pending_events, 50_000);
        assert_eq!(c.model.model_path, None);
    }

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("[model]\nmodle_path = \"x\"\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { key } => assert_eq!(key, "model.modle_path"),
            other => panic!("{other:?}"),
        }
        assert!(err_text("[model]\nmodle_path = \"x\"\n").contains("modle_path"));
        assert!(matches!(
            Config::parse("modle_path = 1\n"),
            Err(ConfigError::UnknownKey { key }) if key == "modle_path"
        ));
    }

    fn err_text(s: &str) -> String {
        Config::parse(s).unwrap_err().to_string()
    }

    #[test]
    fn retention_and_analyzer_flags() {
        let c = Config::parse(
            "[privacy]\nretention = true\n[analyzer]\nmode = \"remote\"\nmax_in_flight = 2\n",
        )
        .unwrap();
        assert!(c.privacy.retention);
        assert_eq!(c.analyzer.mode, AnalyzerMode::Remote);
        assert_eq!(c.analyzer.max_in_flight, 2);
    }

    #[test]
    fn bad_values() {
        assert!(matches!(Config::parse("[server]\nport = \"x\"\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(Config::parse("[server\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            Config::parse("[analyzer]\nmode = \"gpt\"\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            Config::parse("[features]\nmax_pending_events = 0\n"),
            Err(ConfigError::Invalid { .. })
        ));
    }
}
