//! Per-session configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::Stage;

pub const DEFAULT_SYSTEM_PROMPT: &str =
    "You are a digital twin assistant guiding a user through a hands-on assembly task. \
You receive the user's words and camera frames of the work surface and of the user. \
Answer precisely, step by step, and offer encouragement when the user seems stressed. \
End every reply with one line of the form `@@meta emotion=<label> objects=<name:present,...>` \
naming the user's apparent emotion and the parts you can see (append `(X)` to a name for its part letter).";

pub const STT_BACKENDS: &[&str] = &["mock"];
pub const VISION_BACKENDS: &[&str] = &["mock"];
pub const LLM_BACKENDS: &[&str] = &["mock", "http"];
pub const TTS_BACKENDS: &[&str] = &["mock"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown {stage} backend {id:?} (known: {known})")]
    UnknownBackend { stage: &'static str, id: String, known: String },
    #[error("{0} timeout must be positive")]
    ZeroTimeout(&'static str),
    #[error("history budget must be positive")]
    ZeroBudget,
    #[error("feedback attempt limit must be positive")]
    ZeroAttemptLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSelection {
    pub stt: String,
    pub vision: String,
    pub llm: String,
    pub tts: String,
}

impl Default for BackendSelection {
    fn default() -> Self {
        Self { stt: "mock".into(), vision: "mock".into(), llm: "mock".into(), tts: "mock".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageTimeouts {
    pub stt_ms: u64,
    pub vision_ms: u64,
    pub llm_ms: u64,
    pub tts_ms: u64,
}

impl Default for StageTimeouts {
    fn default() -> Self {
        Self { stt_ms: 10_000, vision_ms: 10_000, llm_ms: 60_000, tts_ms: 10_000 }
    }
}

impl StageTimeouts {
    pub fn for_stage(&self, stage: Stage) -> u64 {
        match stage {
            Stage::Stt => self.stt_ms,
            Stage::Vision => self.vision_ms,
            Stage::Llm => self.llm_ms,
            Stage::Tts => self.tts_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub backends: BackendSelection,
    pub timeouts: StageTimeouts,
    pub history_budget: u64,
    pub barge_in_enabled: bool,
    pub feedback_attempt_limit: u32,
    pub system_prompt: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            backends: BackendSelection::default(),
            timeouts: StageTimeouts::default(),
            history_budget: 8_000,
            barge_in_enabled: false,
            feedback_attempt_limit: 5,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        }
    }
}

fn check_backend(stage: &'static str, id: &str, known: &[&str]) -> Result<(), ConfigError> {
    if known.contains(&id) {
        Ok(())
    } else {
        Err(ConfigError::UnknownBackend { stage, id: id.to_string(), known: known.join(", ") })
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_backend("stt", &self.backends.stt, STT_BACKENDS)?;
        check_backend("vision", &self.backends.vision, VISION_BACKENDS)?;
        check_backend("llm", &self.backends.llm, LLM_BACKENDS)?;
        check_backend("tts", &self.backends.tts, TTS_BACKENDS)?;
        for stage in Stage::ALL {
            if self.timeouts.for_stage(stage) == 0 {
                return Err(ConfigError::ZeroTimeout(stage.as_str()));
            }
        }
        if self.history_budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if self.feedback_attempt_limit == 0 {
            return Err(ConfigError::ZeroAttemptLimit);
        }
        Ok(())
    }
}
