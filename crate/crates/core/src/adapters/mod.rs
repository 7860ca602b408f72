//! Backend contracts for speech recognition, camera capture, the chat model
//! and speech synthesis, with deterministic mocks and an HTTP chat client.

mod mock;
mod trailer;
mod wire;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AudioRef, CameraRole, EmotionTag, ObjectTag, VisualObservation};
use crate::prompt::ConstructedPrompt;

pub use mock::{
    CameraEntry, Exchange, MatchKind, MockChat, MockDefaults, MockScript, MockStt, MockTts, MockVision, ScriptMode,
    TranscriptEntry, WORDS_PER_MINUTE,
};
pub use trailer::{format_trailer, parse_reply, split_trailer, TRAILER_PREFIX};
pub use wire::{ChatRequest, HttpChatClient, HttpChatConfig, WireContent, WireMessage, WirePart};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("media error: {0}")]
    Media(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend timed out")]
    Timeout,
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SttResult {
    pub text: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEnvelope {
    pub reply_text: String,
    #[serde(default)]
    pub emotion: Option<EmotionTag>,
    #[serde(default)]
    pub objects: Vec<ObjectTag>,
    /// Backend payload as received.
    #[serde(default)]
    pub raw: serde_json::Value,
    /// Backend-reported or measured latency.
    #[serde(default)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsResult {
    pub audio_ref: AudioRef,
    pub duration_ms: u64,
    pub latency_ms: f64,
}

#[async_trait]
pub trait SpeechToText: Send + Sync {
    async fn transcribe(&self, audio: &AudioRef) -> Result<SttResult, AdapterError>;
}

#[async_trait]
pub trait VisionCapture: Send + Sync {
    async fn capture(&self, role: CameraRole) -> Result<VisualObservation, AdapterError>;

    /// Cameras this backend can serve.
    fn cameras(&self) -> Vec<CameraRole> {
        CameraRole::ALL.to_vec()
    }
}

#[async_trait]
pub trait ChatModel: Send + Sync {
    async fn complete(&self, prompt: &ConstructedPrompt) -> Result<ResponseEnvelope, AdapterError>;
}

#[async_trait]
pub trait TextToSpeech: Send + Sync {
    async fn synthesize(&self, text: &str) -> Result<TtsResult, AdapterError>;
}

/// Resolves a camera role given as text, for callers outside the type system.
pub async fn capture_named(vision: &dyn VisionCapture, role: &str) -> Result<VisualObservation, AdapterError> {
    let role = CameraRole::parse(role).ok_or_else(|| AdapterError::Media(format!("unknown camera role {role:?}")))?;
    vision.capture(role).await
}

/// The four backends a session talks to.
#[derive(Clone)]
pub struct Backends {
    pub stt: Arc<dyn SpeechToText>,
    pub vision: Arc<dyn VisionCapture>,
    pub llm: Arc<dyn ChatModel>,
    pub tts: Arc<dyn TextToSpeech>,
}

impl Backends {
    pub fn mock(script: &MockScript) -> Self {
        Self {
            stt: Arc::new(MockStt::new(script)),
            vision: Arc::new(MockVision::new(script)),
            llm: Arc::new(MockChat::new(script.clone())),
            tts: Arc::new(MockTts::new(script)),
        }
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends").finish_non_exhaustive()
    }
}

/// Checks the structural precondition every chat backend relies on.
pub(crate) fn check_prompt(prompt: &ConstructedPrompt) -> Result<(), AdapterError> {
    use crate::prompt::MessageRole;
    match prompt.messages.first() {
        None => Err(AdapterError::Protocol("empty prompt".into())),
        Some(m) if m.role != MessageRole::System => {
            Err(AdapterError::Protocol("prompt must begin with the system message".into()))
        }
        Some(_) => Ok(()),
    }
}

/// 64-bit FNV-1a, used for stable synthetic identifiers.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
