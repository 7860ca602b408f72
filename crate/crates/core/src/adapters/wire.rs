//! Generic chat-completions HTTP client.
//!
//! Request body (`POST {base_url}/chat/completions`):
//!
//! ```json
//! {
//!   "model": "<model>",
//!   "messages": [
//!     { "role": "system", "content": "<text>" },
//!     { "role": "assistant", "content": "<text>" },
//!     { "role": "user", "content": [
//!         { "type": "text", "text": "<text>" },
//!         { "type": "image_url", "image_url": { "url": "data:image/png;base64,..." } }
//!     ] }
//!   ]
//! }
//! ```
//!
//! `content` is a plain string when a message has no attachments. The reply is
//! read from `choices[0].message.content` and run through the `@@meta` trailer
//! parser. The bearer token comes from the environment variable named in
//! [`HttpChatConfig::auth_env`].

use std::path::Path;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::model::ImageRef;
use crate::prompt::{ConstructedPrompt, MessageRole, PromptMessage};

use super::trailer::parse_reply;
use super::{check_prompt, AdapterError, ChatModel, ResponseEnvelope};

const FIXTURE_SCHEME: &str = "fixture://";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WirePart {
    Text { text: String },
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireContent {
    Text(String),
    Parts(Vec<WirePart>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: MessageRole,
    pub content: WireContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

fn image_url(image: &ImageRef) -> Result<String, AdapterError> {
    Ok(match image {
        ImageRef::Fixture { name } => format!("{FIXTURE_SCHEME}{name}"),
        ImageRef::Url { url } => url.clone(),
        ImageRef::Inline { mime, data } => format!("data:{mime};base64,{data}"),
        ImageRef::File { path } => {
            let path = Path::new(path);
            let bytes = std::fs::read(path)
                .map_err(|e| AdapterError::Media(format!("cannot read image {}: {e}", path.display())))?;
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            format!("data:{};base64,{data}", mime_for(path))
        }
    })
}

fn image_from_url(url: &str) -> Result<ImageRef, AdapterError> {
    if let Some(name) = url.strip_prefix(FIXTURE_SCHEME) {
        return Ok(ImageRef::Fixture { name: name.to_string() });
    }
    if let Some(rest) = url.strip_prefix("data:") {
        let (mime, data) =
            rest.split_once(";base64,").ok_or_else(|| AdapterError::Protocol("data URL is not base64".into()))?;
        return Ok(ImageRef::Inline { mime: mime.to_string(), data: data.to_string() });
    }
    Ok(ImageRef::Url { url: url.to_string() })
}

impl ChatRequest {
    /// Encodes a prompt. File attachments are read and inlined as data URLs.
    pub fn encode(model: &str, prompt: &ConstructedPrompt) -> Result<Self, AdapterError> {
        let messages = prompt
            .messages
            .iter()
            .map(|m| {
                let content = if m.attachments.is_empty() {
                    WireContent::Text(m.text.clone())
                } else {
                    let mut parts = vec![WirePart::Text { text: m.text.clone() }];
                    for a in &m.attachments {
                        parts.push(WirePart::ImageUrl { image_url: WireImageUrl { url: image_url(a)? } });
                    }
                    WireContent::Parts(parts)
                };
                Ok(WireMessage { role: m.role, content })
            })
            .collect::<Result<_, AdapterError>>()?;
        Ok(Self { model: model.to_string(), messages })
    }

    /// Recovers the message sequence from a request body.
    pub fn decode_messages(&self) -> Result<Vec<PromptMessage>, AdapterError> {
        self.messages
            .iter()
            .map(|m| match &m.content {
                WireContent::Text(text) => Ok(PromptMessage::text(m.role, text.clone())),
                WireContent::Parts(parts) => {
                    let mut text = String::new();
                    let mut attachments = Vec::new();
                    for p in parts {
                        match p {
                            WirePart::Text { text: t } => text.push_str(t),
                            WirePart::ImageUrl { image_url } => attachments.push(image_from_url(&image_url.url)?),
                        }
                    }
                    Ok(PromptMessage { role: m.role, text, attachments })
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:11434/v1".into(),
            model: "gpt-4o".into(),
            auth_env: Some("TWINFLOW_LLM_TOKEN".into()),
            timeout_ms: 60_000,
        }
    }
}

pub struct HttpChatClient {
    config: HttpChatConfig,
    http: reqwest::Client,
}

impl HttpChatClient {
    pub fn new(config: HttpChatConfig) -> Result<Self, AdapterError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

#[async_trait]
impl ChatModel for HttpChatClient {
    async fn complete(&self, prompt: &ConstructedPrompt) -> Result<ResponseEnvelope, AdapterError> {
        check_prompt(prompt)?;
        let body = ChatRequest::encode(&self.config.model, prompt)?;
        let mut req = self.http.post(self.endpoint()).json(&body);
        if let Some(token) = self.config.auth_env.as_deref().and_then(|var| std::env::var(var).ok()) {
            req = req.bearer_auth(token);
        }

        let started = Instant::now();
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                AdapterError::Timeout
            } else {
                AdapterError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let raw: serde_json::Value = resp.json().await.map_err(|e| {
            if e.is_timeout() {
                AdapterError::Timeout
            } else {
                AdapterError::Protocol(format!("response is not JSON: {e}"))
            }
        })?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        if !status.is_success() {
            return Err(AdapterError::Transport(format!("backend returned {status}: {raw}")));
        }
        let content = raw
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| AdapterError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        let mut envelope = parse_reply(&content, raw)?;
        envelope.latency_ms = latency_ms;
        Ok(envelope)
    }
}
