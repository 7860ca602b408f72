use std::sync::Arc;

use twinflow_core::adapters::{Backends, HttpChatClient, HttpChatConfig, MockScript};
use twinflow_core::config::SessionConfig;
use twinflow_core::harness::{BackendFactory, Scenario};

/// Builds the backend set named in `config`. Mock stages share `script`.
pub fn build(config: &SessionConfig, script: &MockScript, http: &HttpChatConfig) -> Result<Backends, String> {
    config.validate().map_err(|e| e.to_string())?;
    let mut backends = Backends::mock(script);
    if config.backends.llm == "http" {
        backends.llm = Arc::new(HttpChatClient::new(http.clone()).map_err(|e| e.to_string())?);
    }
    Ok(backends)
}

/// Backend factory for the scenario harness: each scenario gets its own
/// scoped mock script, with its camera fixtures applied.
pub fn scenario_factory(config: SessionConfig, script: MockScript, http: HttpChatConfig) -> BackendFactory {
    Arc::new(move |s: &Scenario| build(&config, &script.for_scenario(&s.id).with_camera_fixtures(&s.fixtures), &http))
}
