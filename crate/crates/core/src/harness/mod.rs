//! Scenario harness: replays scripted interaction scenarios against a session,
//! classifies each outcome and aggregates a per-phase report.

mod report;
mod scenario;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{Backends, MockScript};
use crate::config::SessionConfig;
use crate::metrics::MetricsRecorder;
use crate::model::Turn;
use crate::pipeline::{EventSink, NullSink, PipelineError, Session, TurnInput};

pub use report::{PhaseReport, PhaseRow};
pub use scenario::{CompiledOracle, ObjectCondition, Oracle, Phase, Scenario, ScenarioSuite};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("scenario file declares no scenarios")]
    Empty,
    #[error("scenario {id}: field `{field}`: {message}")]
    Invalid { id: String, field: &'static str, message: String },
    #[error("scenario {id}: cannot build session: {message}")]
    Session { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Success,
    ConditionalSuccess,
    Failure,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Success => "success",
            Classification::ConditionalSuccess => "conditional_success",
            Classification::Failure => "failure",
        }
    }
}

/// Classifies a scenario from whether it passed and how many feedback
/// attempts it consumed.
pub fn classify(passed: bool, attempts: u32, limit: u32) -> Classification {
    match (passed, attempts) {
        (true, 0) => Classification::Success,
        (true, n) if n <= limit => Classification::ConditionalSuccess,
        _ => Classification::Failure,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_id: String,
    pub phase: Phase,
    pub classification: Classification,
    pub feedback_attempts_used: u32,
    pub transcript: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Runs one scenario on `session`. The initial utterance is evaluated first;
/// on a miss, feedback paragraphs are submitted in order (cycling if the list
/// is shorter than the limit) until the oracle passes or the limit is reached.
pub async fn run_scenario(scenario: &Scenario, session: &mut Session) -> ScenarioOutcome {
    let limit = session.config().feedback_attempt_limit;
    let oracle = scenario.oracle.compile().expect("oracle validated at parse time");
    let mut transcript = Vec::new();
    let mut attempts = 0u32;
    let mut text = scenario.initial_user_text.clone();
    let finish = |classification, attempts, transcript, note| ScenarioOutcome {
        scenario_id: scenario.id.clone(),
        phase: scenario.phase,
        classification,
        feedback_attempts_used: attempts,
        transcript,
        note,
    };

    loop {
        match session.run_turn(TurnInput::Text(text)).await {
            Ok(record) => {
                let passed = oracle.passes(&record.envelope);
                transcript.push(record.user_turn);
                transcript.push(record.assistant_turn);
                if passed {
                    return finish(classify(true, attempts, limit), attempts, transcript, None);
                }
            }
            Err(err) => {
                if matches!(err, PipelineError::TurnAborted { .. }) {
                    session.reset();
                }
                return finish(Classification::Failure, attempts, transcript, Some(err.to_string()));
            }
        }
        if attempts >= limit || scenario.feedback_paragraphs.is_empty() {
            return finish(Classification::Failure, attempts, transcript, None);
        }
        text = scenario.feedback_paragraphs[attempts as usize % scenario.feedback_paragraphs.len()].clone();
        attempts += 1;
    }
}

/// Builds the backends for one scenario.
pub type BackendFactory = Arc<dyn Fn(&Scenario) -> Result<Backends, String> + Send + Sync>;

/// Mock backends scoped to each scenario, with its camera fixtures applied.
pub fn mock_factory(script: MockScript) -> BackendFactory {
    Arc::new(move |s: &Scenario| Ok(Backends::mock(&script.for_scenario(&s.id).with_camera_fixtures(&s.fixtures))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub outcomes: Vec<ScenarioOutcome>,
    pub report: PhaseReport,
}

pub struct SuiteRunner {
    config: SessionConfig,
    factory: BackendFactory,
    metrics: Arc<MetricsRecorder>,
    sink: Arc<dyn EventSink>,
    parallel: bool,
}

impl SuiteRunner {
    pub fn new(config: SessionConfig, factory: BackendFactory) -> Self {
        Self {
            config,
            factory,
            metrics: Arc::new(MetricsRecorder::default()),
            sink: Arc::new(NullSink),
            parallel: false,
        }
    }

    pub fn with_metrics(mut self, metrics: Arc<MetricsRecorder>) -> Self {
        self.metrics = metrics;
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    /// Runs scenarios concurrently. Outcomes are still reported in file order.
    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn metrics(&self) -> &Arc<MetricsRecorder> {
        &self.metrics
    }

    fn session_for(&self, scenario: &Scenario) -> Result<Session, SuiteError> {
        let err = |message: String| SuiteError::Session { id: scenario.id.clone(), message };
        let backends = (self.factory)(scenario).map_err(err)?;
        Session::new(
            format!("scenario-{}", scenario.id),
            self.config.clone(),
            backends,
            self.metrics.clone(),
            self.sink.clone(),
        )
        .map_err(|e| err(e.to_string()))
    }

    pub async fn run(&self, suite: &ScenarioSuite) -> Result<SuiteResult, SuiteError> {
        let mut sessions = suite.scenarios.iter().map(|s| self.session_for(s)).collect::<Result<Vec<_>, _>>()?;
        let outcomes = if self.parallel {
            let runs = suite.scenarios.iter().zip(sessions.iter_mut()).map(|(s, sess)| run_scenario(s, sess));
            futures::future::join_all(runs).await
        } else {
            let mut out = Vec::with_capacity(sessions.len());
            for (s, sess) in suite.scenarios.iter().zip(sessions.iter_mut()) {
                out.push(run_scenario(s, sess).await);
            }
            out
        };
        let report = PhaseReport::from_outcomes(&outcomes);
        Ok(SuiteResult { outcomes, report })
    }
}

/// Parses `text` and runs every scenario with the given config and backends.
pub async fn run_suite(text: &str, config: SessionConfig, factory: BackendFactory) -> Result<SuiteResult, SuiteError> {
    let suite = ScenarioSuite::parse(text, config.feedback_attempt_limit)?;
    SuiteRunner::new(config, factory).run(&suite).await
}
