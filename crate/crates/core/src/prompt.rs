//! Prompt construction: system prompt, budget-trimmed history, and the new
//! utterance with camera frames attached, fused into one message sequence.
//!
//! Weight rule: `ceil(chars / 4)` per message text plus 1000 per attached image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConversationHistory, ImageRef, Role, VisualObservation};

pub const IMAGE_WEIGHT: u64 = 1000;

/// `ceil(char_count / 4)`.
pub fn text_weight(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageRole::System => "system",
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        }
    }
}

impl From<Role> for MessageRole {
    fn from(role: Role) -> Self {
        match role {
            Role::System => MessageRole::System,
            Role::Assistant => MessageRole::Assistant,
            // Camera descriptions travel on the user side of the dialogue.
            Role::User | Role::VisualObservation => MessageRole::User,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: MessageRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<ImageRef>,
}

impl PromptMessage {
    pub fn text(role: MessageRole, text: impl Into<String>) -> Self {
        Self { role, text: text.into(), attachments: Vec::new() }
    }

    pub fn weight(&self) -> u64 {
        text_weight(&self.text) + IMAGE_WEIGHT * self.attachments.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructedPrompt {
    pub messages: Vec<PromptMessage>,
    pub total_weight: u64,
}

impl ConstructedPrompt {
    /// The trailing user message (the new utterance).
    pub fn latest_user_text(&self) -> Option<&str> {
        self.messages.last().filter(|m| m.role == MessageRole::User).map(|m| m.text.as_str())
    }

    pub fn without_attachments(&self) -> ConstructedPrompt {
        let messages = self.messages.iter().map(|m| PromptMessage::text(m.role, m.text.clone())).collect();
        ConstructedPrompt { messages, total_weight: self.total_weight }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("user utterance is empty")]
    EmptyUtterance,
    #[error("system prompt and new utterance need {required} weight units, budget is {budget}")]
    Budget { required: u64, budget: u64 },
}

/// Builds `[system] ++ retained history ++ [user + attachments]`.
///
/// Retained history is the longest chronological suffix of `history.turns()`
/// that keeps the total weight within `history.budget()`.
pub fn construct(
    history: &ConversationHistory,
    user_text: &str,
    observations: &[VisualObservation],
) -> Result<ConstructedPrompt, PromptError> {
    if user_text.is_empty() {
        return Err(PromptError::EmptyUtterance);
    }
    let system = PromptMessage::text(MessageRole::System, history.system_prompt());
    let user = PromptMessage {
        role: MessageRole::User,
        text: user_text.to_string(),
        attachments: observations.iter().map(|o| o.image_ref.clone()).collect(),
    };
    let fixed = system.weight() + user.weight();
    let budget = history.budget();
    if fixed > budget {
        return Err(PromptError::Budget { required: fixed, budget });
    }

    let turns = history.turns();
    let mut used = fixed;
    let mut first_kept = turns.len();
    for (i, turn) in turns.iter().enumerate().rev() {
        let w = turn.weight();
        if used + w > budget {
            break;
        }
        used += w;
        first_kept = i;
    }

    let mut messages = Vec::with_capacity(turns.len() - first_kept + 2);
    messages.push(system);
    messages.extend(turns[first_kept..].iter().map(|t| PromptMessage::text(MessageRole::from(t.role), t.text.clone())));
    messages.push(user);

    Ok(ConstructedPrompt { messages, total_weight: used })
}
