//! HTTP session service. Routes and payloads are documented in `docs/http-api.md`.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, Mutex};
use twinflow_core::adapters::{HttpChatConfig, MockScript};
use twinflow_core::config::SessionConfig;
use twinflow_core::fsm::{FaultReason, PipelineState};
use twinflow_core::harness::ScenarioSuite;
use twinflow_core::metrics::{render_csv, MetricStage, MetricsRecorder, StatsSummary};
use twinflow_core::model::{AudioRef, ConversationHistory, TimestampMs, Turn};
use twinflow_core::persistence::{PersistError, SessionMeta, TranscriptStore};
use twinflow_core::pipeline::{PipelineError, Session, SessionEvent, TurnInput, TurnRecord};

use crate::backends;
use crate::feed::EventFeed;
use crate::settings::Settings;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session is busy ({0})")]
    Busy(String),
    #[error("session {0} already exists")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("transcript was empty; turn discarded")]
    EmptyTranscript,
    #[error("turn aborted in {stage} stage: {reason}")]
    TurnAborted { stage: &'static str, reason: FaultReason },
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Busy(_) => "busy",
            ApiError::Conflict(_) => "conflict",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::EmptyTranscript => "empty_transcript",
            ApiError::TurnAborted { .. } => "turn_aborted",
            ApiError::Internal(_) => "internal",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Busy(_) | ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::EmptyTranscript => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::TurnAborted { reason: FaultReason::Timeout, .. } => StatusCode::GATEWAY_TIMEOUT,
            ApiError::TurnAborted { .. } => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let ApiError::TurnAborted { stage, .. } = &self {
            body["stage"] = json!(stage);
        }
        (self.status(), Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::TurnAborted { stage, reason } => ApiError::TurnAborted { stage: stage.as_str(), reason },
            PipelineError::Busy(state) => ApiError::Busy(state.to_string()),
            PipelineError::EmptyTranscript => ApiError::EmptyTranscript,
            PipelineError::Config(e) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::NotFound(id) => ApiError::NotFound(id),
            PersistError::InvalidId(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

pub struct SessionHandle {
    pub id: String,
    pub created_at: TimestampMs,
    pub config: SessionConfig,
    session: Arc<Mutex<Session>>,
    feed: Arc<EventFeed>,
}

pub struct AppState {
    settings: Settings,
    script: MockScript,
    store: TranscriptStore,
    metrics: Arc<MetricsRecorder>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    reflex_seed: u64,
}

impl AppState {
    pub fn new(settings: Settings, reflex_seed: u64) -> anyhow::Result<Arc<Self>> {
        settings.validate()?;
        let script = settings.load_mock_script()?;
        let store = TranscriptStore::open(&settings.data_dir)?;
        Ok(Arc::new(Self {
            settings,
            script,
            store,
            metrics: Arc::new(MetricsRecorder::new()),
            sessions: RwLock::new(HashMap::new()),
            reflex_seed,
        }))
    }

    pub fn metrics(&self) -> &Arc<MetricsRecorder> {
        &self.metrics
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn http_llm(&self) -> &HttpChatConfig {
        &self.settings.http_llm
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(submit_turn))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/events", get(stream_events))
        .route("/sessions/{id}/reset", post(reset_session))
        .route("/metrics", get(get_metrics))
        .route("/metrics.csv", get(get_metrics_csv))
        .route("/scenarios", get(get_scenarios))
        .with_state(state)
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    /// Partial session config laid over the server defaults.
    #[serde(default)]
    pub config: Option<Value>,
    #[serde(default)]
    pub resume: bool,
}

#[derive(Debug, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub created_at: TimestampMs,
    pub state: PipelineState,
    pub config: SessionConfig,
    pub retained_turns: usize,
    pub next_turn_index: u64,
}

async fn info(handle: &SessionHandle) -> SessionInfo {
    let (retained_turns, next_turn_index) = match handle.session.try_lock() {
        Ok(s) => (s.history().turns().len(), s.history().next_turn_index()),
        Err(_) => (0, 0),
    };
    SessionInfo {
        session_id: handle.id.clone(),
        created_at: handle.created_at,
        state: handle.feed.state(),
        config: handle.config.clone(),
        retained_turns,
        next_turn_index,
    }
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))?
    };
    let id = req.session_id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());

    let live = app.sessions.read().get(&id).cloned();
    if let Some(live) = live {
        return if req.resume { Ok((StatusCode::OK, Json(info(&live).await))) } else { Err(ApiError::Conflict(id)) };
    }

    let (base, created_at, turns) = if req.resume {
        let meta = app.store.load_meta(&id)?;
        let turns = app.store.recover(&id)?;
        (meta.config, meta.created_at, turns)
    } else {
        if app.store.exists(&id) {
            return Err(ApiError::Conflict(id));
        }
        (app.settings.session.clone(), TimestampMs::now(), Vec::new())
    };

    let config = match req.config {
        None => base,
        Some(patch) => {
            let mut value = serde_json::to_value(&base).expect("config serializes");
            merge(&mut value, patch);
            serde_json::from_value(value).map_err(|e| ApiError::BadRequest(format!("invalid config: {e}")))?
        }
    };
    config.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let backends = backends::build(&config, &app.script, app.http_llm()).map_err(ApiError::BadRequest)?;

    let mut history = ConversationHistory::new(config.system_prompt.clone(), config.history_budget)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    for turn in turns {
        history.append_turn(turn).map_err(|e| ApiError::Internal(e.to_string()))?;
    }

    let feed = Arc::new(EventFeed::new(app.settings.event_buffer));
    let session = Session::new(id.clone(), config.clone(), backends, app.metrics.clone(), feed.clone())?
        .with_history(history)
        .with_reflex_seed(app.reflex_seed);
    if !req.resume {
        app.store.create(&SessionMeta { session_id: id.clone(), created_at, config: config.clone() })?;
    }

    let handle =
        Arc::new(SessionHandle { id: id.clone(), created_at, config, session: Arc::new(Mutex::new(session)), feed });
    let handle = {
        let mut sessions = app.sessions.write();
        match sessions.get(&id) {
            Some(_) if !req.resume => return Err(ApiError::Conflict(id)),
            Some(existing) => existing.clone(),
            None => {
                sessions.insert(id.clone(), handle.clone());
                handle
            }
        }
    };
    tracing::info!(session = %id, resume = req.resume, "session ready");
    let status = if req.resume { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(info(&handle).await)))
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Value> {
    let mut live: Vec<String> = app.sessions.read().keys().cloned().collect();
    live.sort();
    let stored = app.store.list_sessions().unwrap_or_default();
    Json(json!({ "live": live, "stored": stored }))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let handle = app.handle(&id)?;
    Ok(Json(info(&handle).await))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitTurn {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub audio_ref: Option<AudioRef>,
}

async fn submit_turn(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<SubmitTurn>,
) -> Result<Json<TurnRecord>, ApiError> {
    let input = match (req.text, req.audio_ref) {
        (Some(text), None) if !text.trim().is_empty() => TurnInput::Text(text),
        (Some(_), None) => return Err(ApiError::BadRequest("text must not be empty".into())),
        (None, Some(audio)) => TurnInput::Audio(audio),
        _ => return Err(ApiError::BadRequest("provide exactly one of text or audio_ref".into())),
    };
    let handle = app.handle(&id)?;
    let mut session =
        handle.session.clone().try_lock_owned().map_err(|_| ApiError::Busy(handle.feed.state().name().into()))?;

    // The turn runs to completion even if the client goes away, so the
    // session is never stranded mid-turn and the pair is always persisted.
    let store = app.store.clone();
    let task = tokio::spawn(async move {
        let record = session.run_turn(input).await?;
        store.append_pair(session.id(), &record.user_turn, &record.assistant_turn)?;
        Ok::<_, ApiError>(record)
    });
    let record = task.await.map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(record))
}

#[derive(Debug, Serialize)]
struct Transcript {
    session_id: String,
    turns: Vec<Turn>,
}

async fn get_transcript(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if !app.sessions.read().contains_key(&id) && !app.store.exists(&id) {
        return Err(ApiError::NotFound(id));
    }
    let turns = app.store.recover(&id)?;
    Ok(Json(Transcript { session_id: id, turns }).into_response())
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    since: Option<u64>,
}

fn sse_event(e: &SessionEvent) -> Event {
    let data = serde_json::to_string(e).expect("event serializes");
    let kind = serde_json::to_value(&e.kind).ok().and_then(|v| v["type"].as_str().map(str::to_string));
    Event::default().id(e.seq.to_string()).event(kind.unwrap_or_else(|| "event".into())).data(data)
}

async fn stream_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = app.handle(&id)?;
    let last_id = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok());
    let (backlog, rx) = handle.feed.subscribe(q.since.or(last_id));

    let backlog = stream::iter(backlog.into_iter().map(|e| Ok(sse_event(&e))));
    let live = stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(e) => Some((Ok(sse_event(&e)), Some(rx))),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                tracing::warn!(skipped = n, "event subscriber fell behind; disconnecting");
                let notice = Event::default().event("lagged").data(json!({ "skipped": n }).to_string());
                Some((Ok(notice), None))
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    });
    Ok(Sse::new(futures::StreamExt::chain(backlog, live))
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

async fn reset_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    let handle = app.handle(&id)?;
    {
        let mut session = handle.session.try_lock().map_err(|_| ApiError::Busy(handle.feed.state().name().into()))?;
        session.reset();
    }
    Ok(Json(info(&handle).await))
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    stage: &'static str,
    #[serde(flatten)]
    summary: StatsSummary,
}

fn summary_rows(metrics: &MetricsRecorder) -> Vec<(MetricStage, StatsSummary)> {
    metrics.summarize_all().unwrap_or_default()
}

async fn get_metrics(State(app): State<Arc<AppState>>) -> Json<Value> {
    let rows: Vec<MetricsRow> = summary_rows(&app.metrics)
        .into_iter()
        .map(|(stage, summary)| MetricsRow { stage: stage.field_name().trim_end_matches("_ms"), summary })
        .collect();
    Json(json!({ "samples": app.metrics.len(), "stages": rows }))
}

async fn get_metrics_csv(State(app): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], render_csv(&summary_rows(&app.metrics))).into_response()
}

async fn get_scenarios(State(app): State<Arc<AppState>>) -> Result<Json<ScenarioSuite>, ApiError> {
    let path = app.settings.scenario_file.as_ref().ok_or_else(|| ApiError::NotFound("scenario file".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| ApiError::Internal(e.to_string()))?;
    let suite = ScenarioSuite::parse(&text, app.settings.session.feedback_attempt_limit)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(suite))
}
