//! Shared domain types: turns, conversation history, visual observations and
//! the emotion/object tags the language backend reports back.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::metrics::StageLatencies;
use crate::prompt::text_weight;

/// Wall-clock instant with millisecond precision (milliseconds since the Unix epoch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimestampMs(pub i64);

impl TimestampMs {
    pub fn now() -> Self {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0);
        Self(ms)
    }

    pub fn plus_ms(self, ms: u64) -> Self {
        Self(self.0.saturating_add(ms as i64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    /// Machine-generated description of camera input; never user-authored.
    VisualObservation,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::VisualObservation => "visual_observation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EmotionLabel {
    Neutral,
    Frustrated,
    Anxious,
    Confident,
    Proud,
    Overwhelmed,
    Other(String),
}

impl EmotionLabel {
    /// Case-insensitive parse; anything outside the closed set becomes `Other`.
    pub fn parse(raw: &str) -> Self {
        let trimmed = raw.trim();
        match trimmed.to_ascii_lowercase().as_str() {
            "neutral" => EmotionLabel::Neutral,
            "frustrated" | "frustration" => EmotionLabel::Frustrated,
            "anxious" | "anxiety" => EmotionLabel::Anxious,
            "confident" => EmotionLabel::Confident,
            "proud" | "pride" => EmotionLabel::Proud,
            "overwhelmed" | "overwhelm" => EmotionLabel::Overwhelmed,
            _ => EmotionLabel::Other(trimmed.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Frustrated => "frustrated",
            EmotionLabel::Anxious => "anxious",
            EmotionLabel::Confident => "confident",
            EmotionLabel::Proud => "proud",
            EmotionLabel::Overwhelmed => "overwhelmed",
            EmotionLabel::Other(s) => s,
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(EmotionLabel::parse(&raw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmotionTag")]
pub struct EmotionTag {
    pub label: EmotionLabel,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct RawEmotionTag {
    label: EmotionLabel,
    confidence: f64,
}

impl TryFrom<RawEmotionTag> for EmotionTag {
    type Error = ModelError;

    fn try_from(raw: RawEmotionTag) -> Result<Self, Self::Error> {
        EmotionTag::new(raw.label, raw.confidence)
    }
}

impl EmotionTag {
    pub fn new(label: EmotionLabel, confidence: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::Confidence(confidence));
        }
        Ok(Self { label, confidence })
    }

    pub fn certain(label: EmotionLabel) -> Self {
        Self { label, confidence: 1.0 }
    }
}

/// Single upper-case letter used to label a part in the layout (`A`..`Z`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PartLabel(char);

impl PartLabel {
    pub fn new(c: char) -> Result<Self, ModelError> {
        if c.is_ascii_uppercase() {
            Ok(Self(c))
        } else {
            Err(ModelError::PartLabel(c.to_string()))
        }
    }

    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let mut chars = raw.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::new(c),
            _ => Err(ModelError::PartLabel(raw.to_string())),
        }
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for PartLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        PartLabel::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectTag {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_label: Option<PartLabel>,
    pub present: bool,
}

impl ObjectTag {
    pub fn new(name: impl Into<String>, present: bool) -> Self {
        Self { name: name.into(), part_label: None, present }
    }

    pub fn labeled(name: impl Into<String>, label: PartLabel, present: bool) -> Self {
        Self { name: name.into(), part_label: Some(label), present }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraRole {
    /// Camera pointed at the parts on the work surface.
    TaskView,
    /// Camera pointed at the user.
    UserView,
}

impl CameraRole {
    pub const ALL: [CameraRole; 2] = [CameraRole::TaskView, CameraRole::UserView];

    pub fn as_str(self) -> &'static str {
        match self {
            CameraRole::TaskView => "task_view",
            CameraRole::UserView => "user_view",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "task_view" | "taskview" | "task" => Some(CameraRole::TaskView),
            "user_view" | "userview" | "user" => Some(CameraRole::UserView),
            _ => None,
        }
    }
}

/// Opaque reference to an image; the engine never decodes pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRef {
    Fixture {
        name: String,
    },
    File {
        path: String,
    },
    Url {
        url: String,
    },
    /// Base64-encoded bytes.
    Inline {
        mime: String,
        data: String,
    },
}

/// Opaque reference to an audio clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AudioRef {
    Fixture {
        name: String,
    },
    File {
        path: String,
    },
    /// Base64-encoded bytes. Empty data is silence.
    Inline {
        mime: String,
        data: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualObservation {
    pub camera_role: CameraRole,
    pub image_ref: ImageRef,
    pub captured_at: TimestampMs,
    pub capture_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: u64,
    pub role: Role,
    pub text: String,
    pub created_at: TimestampMs,
    #[serde(default)]
    pub stage_latencies: Option<StageLatencies>,
    #[serde(default)]
    pub emotion: Option<EmotionTag>,
    #[serde(default)]
    pub objects: Vec<ObjectTag>,
}

impl Turn {
    pub fn new(turn_index: u64, role: Role, text: impl Into<String>, created_at: TimestampMs) -> Self {
        Self {
            turn_index,
            role,
            text: text.into(),
            created_at,
            stage_latencies: None,
            emotion: None,
            objects: Vec::new(),
        }
    }

    /// Budget weight of the turn as stored in history (history turns carry no images).
    pub fn weight(&self) -> u64 {
        text_weight(&self.text)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("part label {0:?} must be a single letter A-Z")]
    PartLabel(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("turn index {got} out of order, expected {expected}")]
    IndexOrder { expected: u64, got: u64 },
    #[error("{0} turn has empty text")]
    EmptyText(&'static str),
    #[error("history budget must be positive")]
    ZeroBudget,
    #[error("system turns are carried by the pinned system prompt, not appended")]
    SystemTurn,
}

/// Dialogue log with a pinned system prompt and a weight-budgeted sliding window.
///
/// Retained turns are always a contiguous suffix of everything appended; the
/// system prompt is never evicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationHistory {
    system_prompt: String,
    turns: Vec<Turn>,
    budget: u64,
    next_turn_index: u64,
}

impl ConversationHistory {
    pub fn new(system_prompt: impl Into<String>, budget: u64) -> Result<Self, HistoryError> {
        if budget == 0 {
            return Err(HistoryError::ZeroBudget);
        }
        Ok(Self { system_prompt: system_prompt.into(), turns: Vec::new(), budget, next_turn_index: 0 })
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Index the next appended turn must carry.
    pub fn next_turn_index(&self) -> u64 {
        self.next_turn_index
    }

    pub fn total_weight(&self) -> u64 {
        self.turns.iter().map(Turn::weight).sum()
    }

    /// Appends `turn`, then evicts whole turns oldest-first until the retained
    /// weight fits the budget.
    pub fn append_turn(&mut self, turn: Turn) -> Result<(), HistoryError> {
        if turn.turn_index != self.next_turn_index {
            return Err(HistoryError::IndexOrder { expected: self.next_turn_index, got: turn.turn_index });
        }
        match turn.role {
            Role::System => return Err(HistoryError::SystemTurn),
            Role::User if turn.text.is_empty() => return Err(HistoryError::EmptyText("user")),
            Role::Assistant if turn.text.is_empty() => return Err(HistoryError::EmptyText("assistant")),
            _ => {}
        }
        self.next_turn_index += 1;
        self.turns.push(turn);

        let mut weight = self.total_weight();
        let mut evict = 0;
        while weight > self.budget && evict < self.turns.len() {
            weight -= self.turns[evict].weight();
            evict += 1;
        }
        self.turns.drain(..evict);
        Ok(())
    }

    /// Functional form of [`append_turn`](Self::append_turn).
    pub fn with_turn(mut self, turn: Turn) -> Result<Self, HistoryError> {
        self.append_turn(turn)?;
        Ok(self)
    }
}
