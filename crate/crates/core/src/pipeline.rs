//! Session driver: runs one conversational turn through the state machine,
//! calling backends for the actions it emits and feeding their results back
//! as events.

use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, Backends, ResponseEnvelope, SttResult};
use crate::animation::{generate_visemes, schedule_reflexes, AnimationCue, CueLog, ReflexEvent, VisemeTrack};
use crate::config::{ConfigError, SessionConfig};
use crate::fsm::{Action, FaultReason, Fsm, PipelineEvent, PipelineState, Stage};
use crate::metrics::{MetricsError, MetricsRecorder, StageLatencies};
use crate::model::{AudioRef, ConversationHistory, HistoryError, Role, TimestampMs, Turn, VisualObservation};
use crate::prompt::construct;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TurnInput {
    Text(String),
    Audio(AudioRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub user_text: String,
    pub assistant_text: String,
    pub observations: Vec<VisualObservation>,
    pub envelope: ResponseEnvelope,
    pub stage_latencies: StageLatencies,
    pub user_turn: Turn,
    pub assistant_turn: Turn,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("turn aborted in {stage} stage: {reason:?}")]
    TurnAborted { stage: Stage, reason: FaultReason },
    #[error("session is busy ({0})")]
    Busy(&'static str),
    #[error("transcript was empty; turn discarded")]
    EmptyTranscript,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One entry of a session's ordered event feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: TimestampMs,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    StateChanged { from: PipelineState, to: PipelineState, trigger: String },
    Cue { cue: AnimationCue },
    Visemes { track: VisemeTrack },
    Reflexes { events: Vec<ReflexEvent> },
    Latency { stage: Stage, ms: f64 },
    Ignored { event: String },
    TurnCommitted { user: Turn, assistant: Turn, stage_latencies: StageLatencies },
    TurnAborted { stage: Stage, reason: FaultReason },
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: SessionEvent);
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: SessionEvent) {}
}

/// Keeps every event in memory.
#[derive(Default)]
pub struct EventLog {
    events: Mutex<Vec<SessionEvent>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<SessionEvent> {
        self.events.lock().clone()
    }
}

impl EventSink for EventLog {
    fn emit(&self, event: SessionEvent) {
        self.events.lock().push(event);
    }
}

enum StageFault {
    Timeout,
    Failed(String),
}

impl StageFault {
    fn into_event(self, stage: Stage) -> PipelineEvent {
        match self {
            StageFault::Timeout => PipelineEvent::StageTimeout { stage },
            StageFault::Failed(reason) => PipelineEvent::StageFailed { stage, reason },
        }
    }
}

/// Runs a backend call under the stage timeout. A backend that reports a
/// latency beyond the budget counts as timed out too, which keeps scripted
/// (non-sleeping) mocks and real backends under the same rule.
async fn guarded<T, F>(timeout_ms: u64, call: F, reported: impl Fn(&T) -> f64) -> Result<T, StageFault>
where
    F: Future<Output = Result<T, AdapterError>>,
{
    match tokio::time::timeout(Duration::from_millis(timeout_ms), call).await {
        Err(_) | Ok(Err(AdapterError::Timeout)) => Err(StageFault::Timeout),
        Ok(Err(e)) => Err(StageFault::Failed(e.to_string())),
        Ok(Ok(v)) if reported(&v) > timeout_ms as f64 => Err(StageFault::Timeout),
        Ok(Ok(v)) => Ok(v),
    }
}

pub struct Session {
    id: String,
    config: SessionConfig,
    fsm: Fsm,
    state: PipelineState,
    history: ConversationHistory,
    backends: Backends,
    metrics: Arc<MetricsRecorder>,
    sink: Arc<dyn EventSink>,
    cues: CueLog,
    seq: u64,
    reflex_seed: u64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).field("state", &self.state).finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        config: SessionConfig,
        backends: Backends,
        metrics: Arc<MetricsRecorder>,
        sink: Arc<dyn EventSink>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let history = ConversationHistory::new(config.system_prompt.clone(), config.history_budget)?;
        Ok(Self {
            id: id.into(),
            fsm: Fsm::new(config.barge_in_enabled),
            config,
            state: PipelineState::Idle,
            history,
            backends,
            metrics,
            sink,
            cues: CueLog::default(),
            seq: 0,
            reflex_seed: 0,
        })
    }

    /// Replaces the (empty) history with one reloaded from storage.
    pub fn with_history(mut self, history: ConversationHistory) -> Self {
        self.history = history;
        self
    }

    pub fn with_reflex_seed(mut self, seed: u64) -> Self {
        self.reflex_seed = seed;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn history(&self) -> &ConversationHistory {
        &self.history
    }

    pub fn cues(&self) -> &CueLog {
        &self.cues
    }

    fn emit(&mut self, kind: EventKind) {
        let event = SessionEvent { seq: self.seq, at: TimestampMs::now(), kind };
        self.seq += 1;
        self.sink.emit(event);
    }

    /// Feeds one event through the state machine and publishes the outcome.
    pub fn apply(&mut self, event: PipelineEvent) -> Vec<Action> {
        let (next, actions) = self.fsm.step(&self.state, &event);
        if next.name() != self.state.name() {
            let from = std::mem::replace(&mut self.state, next.clone());
            self.emit(EventKind::StateChanged { from, to: next, trigger: event.name().to_string() });
        } else {
            self.state = next;
        }
        for action in &actions {
            match action {
                Action::EmitAnimationCue { cue } => {
                    let cue = self.cues.push(cue.clone(), TimestampMs::now()).clone();
                    self.emit(EventKind::Cue { cue });
                }
                Action::RecordLatency { stage, ms } => self.emit(EventKind::Latency { stage: *stage, ms: *ms }),
                Action::IgnoredEvent { event } => self.emit(EventKind::Ignored { event: event.clone() }),
                _ => {}
            }
        }
        actions
    }

    /// Leaves the Faulted state.
    pub fn reset(&mut self) {
        self.apply(PipelineEvent::Reset);
    }

    fn abort(&mut self, fault: StageFault, stage: Stage) -> PipelineError {
        self.apply(fault.into_event(stage));
        let reason = match &self.state {
            PipelineState::Faulted { reason, .. } => reason.clone(),
            _ => FaultReason::Timeout,
        };
        self.emit(EventKind::TurnAborted { stage, reason: reason.clone() });
        PipelineError::TurnAborted { stage, reason }
    }

    /// Captures one frame per available camera concurrently.
    async fn capture_frames(&self) -> Result<Vec<VisualObservation>, StageFault> {
        let vision = self.backends.vision.clone();
        let timeout = self.config.timeouts.vision_ms;
        let calls = vision.cameras().into_iter().map(|role| {
            let vision = vision.clone();
            async move { guarded(timeout, vision.capture(role), |o| o.capture_latency_ms).await }
        });
        futures::future::join_all(calls).await.into_iter().collect()
    }

    async fn transcribe(&self, input: &TurnInput) -> Result<SttResult, StageFault> {
        match input {
            TurnInput::Text(text) => Ok(SttResult { text: text.clone(), latency_ms: 0.0 }),
            TurnInput::Audio(audio) => {
                guarded(self.config.timeouts.stt_ms, self.backends.stt.transcribe(audio), |r| r.latency_ms).await
            }
        }
    }

    /// Drives one full turn: listen, transcribe (with concurrent capture),
    /// think, synthesize, speak, commit.
    pub async fn run_turn(&mut self, input: TurnInput) -> Result<TurnRecord, PipelineError> {
        if !self.state.is_idle() {
            return Err(PipelineError::Busy(self.state.name()));
        }
        let wall = Instant::now();
        let started_at = TimestampMs::now();
        let mut backend_wall = Duration::ZERO;

        self.apply(PipelineEvent::UserSpeechStart);
        let audio = match &input {
            TurnInput::Audio(a) => Some(a.clone()),
            TurnInput::Text(_) => None,
        };
        self.apply(PipelineEvent::UserSpeechEnd { audio });

        let t = Instant::now();
        let (vision, stt) = tokio::join!(self.capture_frames(), self.transcribe(&input));
        backend_wall += t.elapsed();

        // Deliver completions in the order they would have finished.
        let vision_ms = match &vision {
            Ok(obs) => obs.iter().map(|o| o.capture_latency_ms).fold(0.0, f64::max),
            Err(_) => self.config.timeouts.vision_ms as f64,
        };
        let stt_ms = match &stt {
            Ok(r) => r.latency_ms,
            Err(_) => self.config.timeouts.stt_ms as f64,
        };
        let mut observations = Vec::new();
        let mut user_text = String::new();
        let mut pending: Vec<(f64, Stage)> = vec![(vision_ms, Stage::Vision), (stt_ms, Stage::Stt)];
        pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).reverse());
        let mut vision = Some(vision);
        let mut stt = Some(stt);
        while let Some((_, stage)) = pending.pop() {
            let event = match stage {
                Stage::Vision => match vision.take().expect("vision result") {
                    Ok(obs) => {
                        observations = obs.clone();
                        PipelineEvent::VisualCaptured { observations: obs }
                    }
                    Err(fault) => return Err(self.abort(fault, Stage::Vision)),
                },
                _ => match stt.take().expect("stt result") {
                    Ok(r) => {
                        user_text = r.text.clone();
                        PipelineEvent::TranscriptReady { text: r.text, latency_ms: r.latency_ms }
                    }
                    Err(fault) => return Err(self.abort(fault, Stage::Stt)),
                },
            };
            self.apply(event);
            if self.state.is_idle() {
                return Err(PipelineError::EmptyTranscript);
            }
        }
        debug_assert!(matches!(self.state, PipelineState::Thinking { .. }));

        let prompt = match construct(&self.history, &user_text, &observations) {
            Ok(p) => p,
            Err(e) => return Err(self.abort(StageFault::Failed(e.to_string()), Stage::Llm)),
        };
        let t = Instant::now();
        let llm = guarded(self.config.timeouts.llm_ms, self.backends.llm.complete(&prompt), |e| e.latency_ms).await;
        backend_wall += t.elapsed();
        let envelope = match llm {
            Ok(env) => env,
            Err(fault) => return Err(self.abort(fault, Stage::Llm)),
        };
        let actions =
            self.apply(PipelineEvent::LlmResponseReady { envelope: envelope.clone(), latency_ms: envelope.latency_ms });
        let speech_text = actions
            .iter()
            .find_map(|a| match a {
                Action::SynthesizeSpeech { text } => Some(text.clone()),
                _ => None,
            })
            .unwrap_or_else(|| envelope.reply_text.clone());

        let t = Instant::now();
        let tts =
            guarded(self.config.timeouts.tts_ms, self.backends.tts.synthesize(&speech_text), |r| r.latency_ms).await;
        backend_wall += t.elapsed();
        let tts = match tts {
            Ok(r) => r,
            Err(fault) => return Err(self.abort(fault, Stage::Tts)),
        };
        self.apply(PipelineEvent::AudioReady {
            audio: tts.audio_ref.clone(),
            duration_ms: tts.duration_ms,
            latency_ms: tts.latency_ms,
        });

        if let Ok(track) = generate_visemes(&speech_text, tts.duration_ms) {
            self.emit(EventKind::Visemes { track });
        }
        if tts.duration_ms > 0 {
            let seed = self.reflex_seed ^ self.history.next_turn_index();
            if let Ok(events) = schedule_reflexes(tts.duration_ms, seed) {
                self.emit(EventKind::Reflexes { events });
            }
        }
        let actions = self.apply(PipelineEvent::SpeechPlaybackComplete);
        debug_assert!(actions.contains(&Action::CommitTurn));

        let overhead_ms = wall.elapsed().saturating_sub(backend_wall).as_millis() as f64;
        let latencies = StageLatencies::from_parts(
            stt_ms,
            vision_ms,
            envelope.latency_ms,
            tts.latency_ms,
            tts.duration_ms as f64 + overhead_ms,
        );

        let index = self.history.next_turn_index();
        let user_turn = Turn::new(index, Role::User, user_text.clone(), started_at);
        let mut assistant_turn = Turn::new(index + 1, Role::Assistant, envelope.reply_text.clone(), TimestampMs::now());
        assistant_turn.stage_latencies = Some(latencies);
        assistant_turn.emotion = envelope.emotion.clone();
        assistant_turn.objects = envelope.objects.clone();

        let mut next_history = self.history.clone();
        next_history.append_turn(user_turn.clone())?;
        next_history.append_turn(assistant_turn.clone())?;
        self.history = next_history;
        self.metrics.record(&self.id, latencies)?;
        self.emit(EventKind::TurnCommitted {
            user: user_turn.clone(),
            assistant: assistant_turn.clone(),
            stage_latencies: latencies,
        });

        Ok(TurnRecord {
            user_text,
            assistant_text: envelope.reply_text.clone(),
            observations,
            envelope,
            stage_latencies: latencies,
            user_turn,
            assistant_turn,
        })
    }
}
