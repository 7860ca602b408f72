//! Server configuration file.
//!
//! ```toml
//! data_dir = "data"
//! bind = "127.0.0.1:8080"
//! mock_script = "fixtures/paper_transcript_mock.toml"   # optional
//! scenario_file = "fixtures/paper_suite.toml"           # optional, served at /scenarios
//! event_buffer = 256
//!
//! [session]                 # defaults for new sessions
//! history_budget = 8000
//! barge_in_enabled = false
//! feedback_attempt_limit = 5
//! [session.backends]
//! llm = "http"
//! [session.timeouts]
//! llm_ms = 60000
//!
//! [http_llm]
//! base_url = "https://api.example.com/v1"
//! model = "gpt-4o"
//! auth_env = "TWINFLOW_LLM_TOKEN"
//! timeout_ms = 60000
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use twinflow_core::adapters::{HttpChatConfig, MockScript};
use twinflow_core::config::SessionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub bind: String,
    pub mock_script: Option<PathBuf>,
    pub scenario_file: Option<PathBuf>,
    /// Per-subscriber event buffer; a subscriber that falls further behind is disconnected.
    pub event_buffer: usize,
    pub session: SessionConfig,
    pub http_llm: HttpChatConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            bind: "127.0.0.1:8080".into(),
            mock_script: None,
            scenario_file: None,
            event_buffer: 256,
            session: SessionConfig::default(),
            http_llm: HttpChatConfig::default(),
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut settings: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths in the file are relative to the file itself.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut settings.data_dir), settings.mock_script.as_mut(), settings.scenario_file.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(settings)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.session.validate()?;
        anyhow::ensure!(self.event_buffer > 0, "event_buffer must be positive");
        Ok(())
    }

    pub fn load_mock_script(&self) -> anyhow::Result<MockScript> {
        match &self.mock_script {
            None => Ok(MockScript::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                MockScript::parse(&text).with_context(|| format!("parsing {}", path.display()))
            }
        }
    }
}
