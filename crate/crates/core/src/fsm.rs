//! Interaction-flow state machine for one conversational turn.
//!
//! [`Fsm::step`] is a total, pure transition function. It never performs I/O;
//! it returns [`Action`]s describing the effects the driver must carry out.
//!
//! ```text
//! Idle --UserSpeechStart--> Listening --UserSpeechEnd--> Transcribing
//!   --TranscriptReady--> Thinking (joins VisualCaptured, then LlmResponseReady, then AudioReady)
//!   --AudioReady--> Speaking --SpeechPlaybackComplete--> Idle   (CommitTurn)
//! any --StageTimeout/StageFailed--> Faulted --Reset--> Idle
//! ```

use serde::{Deserialize, Serialize};

use crate::adapters::ResponseEnvelope;
use crate::animation::CueKind;
use crate::model::{AudioRef, VisualObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stt,
    Vision,
    Llm,
    Tts,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Stt, Stage::Vision, Stage::Llm, Stage::Tts];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stt => "stt",
            Stage::Vision => "vision",
            Stage::Llm => "llm",
            Stage::Tts => "tts",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultReason {
    Timeout,
    Error(String),
}

impl std::fmt::Display for FaultReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FaultReason::Timeout => f.write_str("timed out"),
            FaultReason::Error(e) => f.write_str(e),
        }
    }
}

/// What the Thinking state is still waiting for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingPhase {
    /// Transcript is in, camera frames are not; the prompt cannot be submitted yet.
    AwaitingVisual,
    AwaitingResponse,
    AwaitingAudio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum PipelineState {
    Idle,
    Listening { visual_ready: bool },
    Transcribing { visual_ready: bool },
    Thinking { phase: ThinkingPhase },
    Speaking,
    Faulted { stage: Stage, reason: FaultReason },
}

impl PipelineState {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineState::Idle => "idle",
            PipelineState::Listening { .. } => "listening",
            PipelineState::Transcribing { .. } => "transcribing",
            PipelineState::Thinking { .. } => "thinking",
            PipelineState::Speaking => "speaking",
            PipelineState::Faulted { .. } => "faulted",
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, PipelineState::Idle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineEvent {
    UserSpeechStart,
    UserSpeechEnd {
        audio: Option<AudioRef>,
    },
    TranscriptReady {
        text: String,
        latency_ms: f64,
    },
    VisualCaptured {
        observations: Vec<VisualObservation>,
    },
    LlmResponseReady {
        envelope: ResponseEnvelope,
        latency_ms: f64,
    },
    AudioReady {
        audio: AudioRef,
        duration_ms: u64,
        latency_ms: f64,
    },
    SpeechPlaybackComplete,
    StageTimeout {
        stage: Stage,
    },
    /// A backend returned an error (not a timeout).
    StageFailed {
        stage: Stage,
        reason: String,
    },
    Reset,
}

impl PipelineEvent {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineEvent::UserSpeechStart => "user_speech_start",
            PipelineEvent::UserSpeechEnd { .. } => "user_speech_end",
            PipelineEvent::TranscriptReady { .. } => "transcript_ready",
            PipelineEvent::VisualCaptured { .. } => "visual_captured",
            PipelineEvent::LlmResponseReady { .. } => "llm_response_ready",
            PipelineEvent::AudioReady { .. } => "audio_ready",
            PipelineEvent::SpeechPlaybackComplete => "speech_playback_complete",
            PipelineEvent::StageTimeout { .. } => "stage_timeout",
            PipelineEvent::StageFailed { .. } => "stage_failed",
            PipelineEvent::Reset => "reset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    CaptureFrames,
    /// Open the audio stream so transcription can start once speech ends.
    PrepareTranscription,
    StartTranscription {
        audio: Option<AudioRef>,
    },
    SubmitPrompt,
    SynthesizeSpeech {
        text: String,
    },
    StartPlayback {
        audio: AudioRef,
        duration_ms: u64,
    },
    /// Discard unplayed audio (barge-in).
    StopPlayback,
    EmitAnimationCue {
        cue: CueKind,
    },
    RecordLatency {
        stage: Stage,
        ms: f64,
    },
    CommitTurn,
    IgnoredEvent {
        event: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fsm {
    pub barge_in_enabled: bool,
}

fn vision_latency(observations: &[VisualObservation]) -> f64 {
    // Cameras are captured concurrently; the stage lasts as long as the slowest.
    observations.iter().map(|o| o.capture_latency_ms).fold(0.0, f64::max)
}

impl Fsm {
    pub fn new(barge_in_enabled: bool) -> Self {
        Self { barge_in_enabled }
    }

    pub fn step(&self, state: &PipelineState, event: &PipelineEvent) -> (PipelineState, Vec<Action>) {
        use PipelineEvent as E;
        use PipelineState as S;

        let ignored = || (state.clone(), vec![Action::IgnoredEvent { event: event.name().to_string() }]);

        match (state, event) {
            (S::Faulted { .. }, E::Reset) => (S::Idle, vec![Action::EmitAnimationCue { cue: CueKind::Idle }]),
            (S::Faulted { .. }, _) => ignored(),
            (_, E::StageTimeout { stage }) => (
                S::Faulted { stage: *stage, reason: FaultReason::Timeout },
                vec![Action::EmitAnimationCue { cue: CueKind::Idle }],
            ),
            (_, E::StageFailed { stage, reason }) => (
                S::Faulted { stage: *stage, reason: FaultReason::Error(reason.clone()) },
                vec![Action::EmitAnimationCue { cue: CueKind::Idle }],
            ),

            (S::Idle, E::UserSpeechStart) => {
                (S::Listening { visual_ready: false }, vec![Action::CaptureFrames, Action::PrepareTranscription])
            }

            (S::Listening { visual_ready: false }, E::VisualCaptured { observations }) => (
                S::Listening { visual_ready: true },
                vec![Action::RecordLatency { stage: Stage::Vision, ms: vision_latency(observations) }],
            ),
            (S::Listening { visual_ready }, E::UserSpeechEnd { audio }) => (
                S::Transcribing { visual_ready: *visual_ready },
                vec![Action::StartTranscription { audio: audio.clone() }],
            ),

            (S::Transcribing { visual_ready: false }, E::VisualCaptured { observations }) => (
                S::Transcribing { visual_ready: true },
                vec![Action::RecordLatency { stage: Stage::Vision, ms: vision_latency(observations) }],
            ),
            (S::Transcribing { .. }, E::TranscriptReady { text, .. }) if text.trim().is_empty() => (
                S::Idle,
                vec![
                    Action::IgnoredEvent { event: event.name().to_string() },
                    Action::EmitAnimationCue { cue: CueKind::Idle },
                ],
            ),
            (S::Transcribing { visual_ready }, E::TranscriptReady { latency_ms, .. }) => {
                let mut actions = vec![Action::EmitAnimationCue { cue: CueKind::Thinking }];
                let phase = if *visual_ready {
                    actions.push(Action::SubmitPrompt);
                    ThinkingPhase::AwaitingResponse
                } else {
                    ThinkingPhase::AwaitingVisual
                };
                actions.push(Action::RecordLatency { stage: Stage::Stt, ms: *latency_ms });
                (S::Thinking { phase }, actions)
            }

            (S::Thinking { phase: ThinkingPhase::AwaitingVisual }, E::VisualCaptured { observations }) => (
                S::Thinking { phase: ThinkingPhase::AwaitingResponse },
                vec![
                    Action::RecordLatency { stage: Stage::Vision, ms: vision_latency(observations) },
                    Action::SubmitPrompt,
                ],
            ),
            (S::Thinking { phase: ThinkingPhase::AwaitingResponse }, E::LlmResponseReady { envelope, latency_ms }) => {
                let mut actions = vec![Action::RecordLatency { stage: Stage::Llm, ms: *latency_ms }];
                if let Some(emotion) = &envelope.emotion {
                    actions.push(Action::EmitAnimationCue { cue: CueKind::EmotionOverlay(emotion.clone()) });
                }
                actions.push(Action::SynthesizeSpeech { text: envelope.reply_text.clone() });
                (S::Thinking { phase: ThinkingPhase::AwaitingAudio }, actions)
            }
            (S::Thinking { phase: ThinkingPhase::AwaitingAudio }, E::AudioReady { audio, duration_ms, latency_ms }) => {
                (
                    S::Speaking,
                    vec![
                        Action::RecordLatency { stage: Stage::Tts, ms: *latency_ms },
                        Action::EmitAnimationCue { cue: CueKind::Speaking },
                        Action::StartPlayback { audio: audio.clone(), duration_ms: *duration_ms },
                    ],
                )
            }

            (S::Speaking, E::SpeechPlaybackComplete) => {
                (S::Idle, vec![Action::EmitAnimationCue { cue: CueKind::Idle }, Action::CommitTurn])
            }
            (S::Speaking, E::UserSpeechStart) if self.barge_in_enabled => (
                S::Listening { visual_ready: false },
                vec![Action::StopPlayback, Action::CommitTurn, Action::CaptureFrames, Action::PrepareTranscription],
            ),

            _ => ignored(),
        }
    }
}
