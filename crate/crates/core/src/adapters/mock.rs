//! Deterministic scripted backends.
//!
//! A [`MockScript`] is a TOML document:
//!
//! ```toml
//! mode = "pattern"            # or "sequential"
//! realtime = false            # sleep for the scripted latency when true
//!
//! [defaults]
//! stt_ms = 1300
//! vision_ms = 2130
//! llm_ms = 9720
//! tts_ms = 930
//!
//! [[exchange]]
//! scenario = "1.2"            # optional: only visible to this scenario
//! match = "Which part is the receiver?"
//! match_kind = "exact"        # or "prefix"; omit `match` to match anything
//! reply_text = "The receiver is labeled as part G."
//! emotion = "neutral"
//! objects = [{ name = "receiver", part_label = "G", present = true }]
//! latency_ms = 9000
//!
//! [[transcript]]
//! audio = "clip-1"
//! text = "I feel like something is missing. Check again"
//!
//! [[camera]]
//! role = "task_view"
//! fixture = "parts_all_present"
//! ```
//!
//! Exchanges are consumed once. In sequential mode replies are handed out in
//! file order; in pattern mode the first unconsumed exchange whose pattern
//! matches the newest user message wins. Running out is an error.

use std::collections::HashMap;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::model::{
    AudioRef, CameraRole, EmotionLabel, EmotionTag, ImageRef, ObjectTag, TimestampMs, VisualObservation,
};
use crate::prompt::ConstructedPrompt;

use super::trailer::{format_trailer, parse_reply};
use super::{
    check_prompt, fnv1a, AdapterError, ChatModel, ResponseEnvelope, SpeechToText, SttResult, TextToSpeech, TtsResult,
    VisionCapture,
};

pub const WORDS_PER_MINUTE: u64 = 150;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    Sequential,
    #[default]
    Pattern,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    #[default]
    Exact,
    Prefix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockDefaults {
    pub stt_ms: f64,
    pub vision_ms: f64,
    pub llm_ms: f64,
    pub tts_ms: f64,
}

impl Default for MockDefaults {
    fn default() -> Self {
        Self { stt_ms: 1300.0, vision_ms: 2130.0, llm_ms: 9720.0, tts_ms: 930.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default)]
    pub match_kind: MatchKind,
    pub reply_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objects: Vec<ObjectTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

impl Exchange {
    pub fn reply(reply_text: impl Into<String>) -> Self {
        Self {
            scenario: None,
            pattern: None,
            match_kind: MatchKind::Exact,
            reply_text: reply_text.into(),
            emotion: None,
            objects: Vec::new(),
            latency_ms: None,
        }
    }

    fn matches(&self, user_text: &str) -> bool {
        match (&self.pattern, self.match_kind) {
            (None, _) => true,
            (Some(p), MatchKind::Exact) => p.trim() == user_text.trim(),
            (Some(p), MatchKind::Prefix) => user_text.trim_start().starts_with(p.trim()),
        }
    }

    /// The reply as a real backend would send it, trailer included.
    pub fn raw_reply(&self) -> String {
        let emotion = self.emotion.as_deref().map(|e| EmotionTag::certain(EmotionLabel::parse(e)));
        if emotion.is_none() && self.objects.is_empty() {
            self.reply_text.clone()
        } else {
            format!("{}\n{}", self.reply_text, format_trailer(emotion.as_ref(), &self.objects))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub audio: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub role: CameraRole,
    pub fixture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub mode: ScriptMode,
    #[serde(default)]
    pub realtime: bool,
    #[serde(default)]
    pub defaults: MockDefaults,
    #[serde(default, rename = "exchange")]
    pub exchanges: Vec<Exchange>,
    #[serde(default, rename = "transcript")]
    pub transcripts: Vec<TranscriptEntry>,
    #[serde(default, rename = "camera")]
    pub cameras: Vec<CameraEntry>,
}

impl MockScript {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn sequential(replies: impl IntoIterator<Item = Exchange>) -> Self {
        Self { mode: ScriptMode::Sequential, exchanges: replies.into_iter().collect(), ..Self::default() }
    }

    /// The script as seen by one scenario: unscoped exchanges plus those tagged with `id`.
    pub fn for_scenario(&self, id: &str) -> Self {
        let mut scoped = self.clone();
        scoped.exchanges.retain(|e| e.scenario.as_deref().is_none_or(|s| s == id));
        scoped
    }

    /// Replaces the camera fixtures (in role order) for one run.
    pub fn with_camera_fixtures(mut self, fixtures: &[String]) -> Self {
        if fixtures.is_empty() {
            return self;
        }
        self.cameras = CameraRole::ALL
            .iter()
            .zip(fixtures)
            .map(|(role, fixture)| {
                let latency_ms = self.cameras.iter().find(|c| c.role == *role).and_then(|c| c.latency_ms);
                CameraEntry { role: *role, fixture: fixture.clone(), latency_ms }
            })
            .collect();
        self
    }
}

async fn simulate(realtime: bool, latency_ms: f64) {
    if realtime && latency_ms > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(latency_ms / 1000.0)).await;
    }
}

pub struct MockStt {
    transcripts: HashMap<String, (String, f64)>,
    realtime: bool,
}

impl MockStt {
    pub fn new(script: &MockScript) -> Self {
        let transcripts = script
            .transcripts
            .iter()
            .map(|t| (t.audio.clone(), (t.text.clone(), t.latency_ms.unwrap_or(script.defaults.stt_ms))))
            .collect();
        Self { transcripts, realtime: script.realtime }
    }

    fn lookup(&self, key: &str) -> Result<(String, f64), AdapterError> {
        self.transcripts
            .get(key)
            .cloned()
            .ok_or_else(|| AdapterError::Media(format!("no scripted transcript for audio {key:?}")))
    }
}

#[async_trait]
impl SpeechToText for MockStt {
    async fn transcribe(&self, audio: &AudioRef) -> Result<SttResult, AdapterError> {
        let (text, latency_ms) = match audio {
            AudioRef::Fixture { name } => self.lookup(name)?,
            AudioRef::File { path } => {
                let path = std::path::Path::new(path);
                if !path.is_file() {
                    return Err(AdapterError::Media(format!("audio file {} not found", path.display())));
                }
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                self.lookup(stem)?
            }
            AudioRef::Inline { data, .. } if data.is_empty() => (String::new(), 0.0),
            AudioRef::Inline { .. } => {
                return Err(AdapterError::Media("mock recognizer only resolves fixture or file audio".into()))
            }
        };
        simulate(self.realtime, latency_ms).await;
        Ok(SttResult { text, latency_ms })
    }
}

pub struct MockVision {
    cameras: Vec<CameraEntry>,
    default_latency: f64,
    realtime: bool,
}

impl MockVision {
    /// Without `[[camera]]` entries both cameras are available with stock fixtures.
    pub fn new(script: &MockScript) -> Self {
        let cameras = if script.cameras.is_empty() {
            vec![
                CameraEntry { role: CameraRole::TaskView, fixture: "parts_all_present".into(), latency_ms: None },
                CameraEntry { role: CameraRole::UserView, fixture: "user_neutral".into(), latency_ms: None },
            ]
        } else {
            script.cameras.clone()
        };
        Self { cameras, default_latency: script.defaults.vision_ms, realtime: script.realtime }
    }
}

#[async_trait]
impl VisionCapture for MockVision {
    async fn capture(&self, role: CameraRole) -> Result<VisualObservation, AdapterError> {
        let entry = self
            .cameras
            .iter()
            .find(|c| c.role == role)
            .ok_or_else(|| AdapterError::Media(format!("camera {} unavailable", role.as_str())))?;
        let latency = entry.latency_ms.unwrap_or(self.default_latency);
        simulate(self.realtime, latency).await;
        Ok(VisualObservation {
            camera_role: role,
            image_ref: ImageRef::Fixture { name: entry.fixture.clone() },
            captured_at: TimestampMs::now(),
            capture_latency_ms: latency,
        })
    }

    fn cameras(&self) -> Vec<CameraRole> {
        self.cameras.iter().map(|c| c.role).collect()
    }
}

pub struct MockChat {
    script: MockScript,
    consumed: Mutex<Vec<bool>>,
}

impl MockChat {
    pub fn new(script: MockScript) -> Self {
        let consumed = Mutex::new(vec![false; script.exchanges.len()]);
        Self { script, consumed }
    }

    pub fn remaining(&self) -> usize {
        self.consumed.lock().iter().filter(|c| !**c).count()
    }
}

#[async_trait]
impl ChatModel for MockChat {
    async fn complete(&self, prompt: &ConstructedPrompt) -> Result<ResponseEnvelope, AdapterError> {
        check_prompt(prompt)?;
        let user_text = prompt.latest_user_text().unwrap_or_default();
        let exchange = {
            let mut consumed = self.consumed.lock();
            let pick = self.script.exchanges.iter().enumerate().position(|(i, e)| {
                !consumed[i] && (self.script.mode == ScriptMode::Sequential || e.matches(user_text))
            });
            let i = pick.ok_or(AdapterError::ScriptExhausted)?;
            consumed[i] = true;
            self.script.exchanges[i].clone()
        };
        let latency_ms = exchange.latency_ms.unwrap_or(self.script.defaults.llm_ms);
        simulate(self.script.realtime, latency_ms).await;
        let raw = exchange.raw_reply();
        let mut envelope = parse_reply(&raw, serde_json::Value::String(raw.clone()))?;
        envelope.latency_ms = latency_ms;
        Ok(envelope)
    }
}

pub struct MockTts {
    latency_ms: f64,
    realtime: bool,
}

impl MockTts {
    pub fn new(script: &MockScript) -> Self {
        Self { latency_ms: script.defaults.tts_ms, realtime: script.realtime }
    }

    /// Speech duration at 150 words per minute.
    pub fn duration_for(text: &str) -> u64 {
        let words = text.split_whitespace().count() as u64;
        60_000 * words / WORDS_PER_MINUTE
    }
}

#[async_trait]
impl TextToSpeech for MockTts {
    async fn synthesize(&self, text: &str) -> Result<TtsResult, AdapterError> {
        if text.trim().is_empty() {
            return Err(AdapterError::Precondition("text to synthesize is empty"));
        }
        simulate(self.realtime, self.latency_ms).await;
        Ok(TtsResult {
            audio_ref: AudioRef::Fixture { name: format!("mock-tts-{:016x}", fnv1a(text.as_bytes())) },
            duration_ms: Self::duration_for(text),
            latency_ms: self.latency_ms,
        })
    }
}
