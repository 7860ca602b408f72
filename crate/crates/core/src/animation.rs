//! Animation cues, reflex scheduling and viseme lip-sync timelines.
//!
//! Nothing here renders; the output is a timeline any renderer can follow.
//!
//! Viseme table (grapheme level, case-insensitive):
//!
//! | viseme | graphemes                         | weight |
//! |--------|-----------------------------------|--------|
//! | rest   | whitespace, punctuation (closed)  | 1      |
//! | ai     | a i                               | 2      |
//! | e      | e                                 | 2      |
//! | o      | o                                 | 2      |
//! | u      | u                                 | 2      |
//! | mbp    | m b p                             | 1      |
//! | fv     | f v                               | 1      |
//! | l      | l                                 | 1      |
//! | wq     | w q                               | 1      |
//! | etc    | every other letter or digit       | 1      |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmotionTag, TimestampMs};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnimationError {
    #[error("contract violation: {0}")]
    Contract(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Idle,
    Thinking,
    Speaking,
    EmotionOverlay(EmotionTag),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationCue {
    pub kind: CueKind,
    pub at: TimestampMs,
}

/// Per-session cue log; timestamps never go backwards.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CueLog {
    cues: Vec<AnimationCue>,
}

impl CueLog {
    pub fn push(&mut self, kind: CueKind, at: TimestampMs) -> &AnimationCue {
        let at = self.cues.last().map_or(at, |last| at.max(last.at));
        self.cues.push(AnimationCue { kind, at });
        self.cues.last().expect("just pushed")
    }

    pub fn cues(&self) -> &[AnimationCue] {
        &self.cues
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viseme {
    Rest,
    Ai,
    E,
    O,
    U,
    Mbp,
    Fv,
    L,
    Wq,
    Etc,
}

impl Viseme {
    pub fn for_char(c: char) -> Viseme {
        match c.to_ascii_lowercase() {
            'a' | 'i' => Viseme::Ai,
            'e' => Viseme::E,
            'o' => Viseme::O,
            'u' => Viseme::U,
            'm' | 'b' | 'p' => Viseme::Mbp,
            'f' | 'v' => Viseme::Fv,
            'l' => Viseme::L,
            'w' | 'q' => Viseme::Wq,
            c if c.is_alphanumeric() => Viseme::Etc,
            _ => Viseme::Rest,
        }
    }

    pub fn weight(self) -> u64 {
        match self {
            Viseme::Ai | Viseme::E | Viseme::O | Viseme::U => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisemeSegment {
    pub viseme: Viseme,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl VisemeSegment {
    pub fn len_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisemeTrack {
    pub segments: Vec<VisemeSegment>,
    pub total_duration_ms: u64,
}

impl VisemeTrack {
    /// Empty text: one closed-mouth segment spanning the whole (possibly zero) duration.
    fn degenerate(duration_ms: u64) -> Self {
        Self {
            segments: vec![VisemeSegment { viseme: Viseme::Rest, start_ms: 0, end_ms: duration_ms }],
            total_duration_ms: duration_ms,
        }
    }
}

/// Closed-mouth tail: `max(50 ms, 2% of duration)`, never longer than the clip.
pub fn tail_ms(duration_ms: u64) -> u64 {
    (duration_ms / 50).max(50).min(duration_ms)
}

/// Maps `text` onto a viseme timeline covering exactly `[0, duration_ms]`.
///
/// Consecutive graphemes with the same viseme form one run; runs share the
/// speech time in proportion to their summed weights using integer cumulative
/// boundaries, so segment lengths always add up exactly.
pub fn generate_visemes(text: &str, duration_ms: u64) -> Result<VisemeTrack, AnimationError> {
    if text.is_empty() {
        return Ok(VisemeTrack::degenerate(duration_ms));
    }
    if duration_ms == 0 {
        return Err(AnimationError::Contract("non-empty text needs a positive duration"));
    }

    let mut runs: Vec<(Viseme, u64)> = Vec::new();
    for c in text.chars() {
        let v = Viseme::for_char(c);
        match runs.last_mut() {
            Some((last, w)) if *last == v => *w += v.weight(),
            _ => runs.push((v, v.weight())),
        }
    }

    let tail = tail_ms(duration_ms);
    let speech = (duration_ms - tail) as u128;
    let total_weight: u128 = runs.iter().map(|(_, w)| *w as u128).sum();

    let mut segments: Vec<VisemeSegment> = Vec::with_capacity(runs.len() + 1);
    let mut push = |viseme: Viseme, start_ms: u64, end_ms: u64| {
        if end_ms <= start_ms {
            return;
        }
        match segments.last_mut() {
            Some(last) if last.viseme == viseme => last.end_ms = end_ms,
            _ => segments.push(VisemeSegment { viseme, start_ms, end_ms }),
        }
    };

    let mut cumulative: u128 = 0;
    let mut start = 0u64;
    for (viseme, w) in &runs {
        cumulative += *w as u128;
        let end = (speech * cumulative / total_weight) as u64;
        push(*viseme, start, end);
        start = end;
    }
    push(Viseme::Rest, start, duration_ms);

    Ok(VisemeTrack { segments, total_duration_ms: duration_ms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflexKind {
    Blink,
    Breath,
    Fiddle,
}

impl ReflexKind {
    /// Inclusive inter-arrival bounds in milliseconds.
    pub fn interval_bounds(self) -> (u64, u64) {
        match self {
            ReflexKind::Blink => (2_000, 8_000),
            ReflexKind::Breath => (3_000, 6_000),
            ReflexKind::Fiddle => (6_000, 15_000),
        }
    }
}

/// A reflex movement at `at_ms` milliseconds from the start of the span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflexEvent {
    pub kind: ReflexKind,
    pub at_ms: u64,
}

/// Seeded reflex schedule over `[0, span_ms)`, sorted by time.
pub fn schedule_reflexes(span_ms: u64, seed: u64) -> Result<Vec<ReflexEvent>, AnimationError> {
    if span_ms == 0 {
        return Err(AnimationError::Contract("reflex span must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for kind in [ReflexKind::Blink, ReflexKind::Breath, ReflexKind::Fiddle] {
        let (lo, hi) = kind.interval_bounds();
        let mut t = 0u64;
        loop {
            t += rng.random_range(lo..=hi);
            if t >= span_ms {
                break;
            }
            events.push(ReflexEvent { kind, at_ms: t });
        }
    }
    events.sort_by_key(|e| (e.at_ms, e.kind));
    Ok(events)
}
