//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use twinflow_core::adapters::{Backends, Exchange, MockScript, ResponseEnvelope};
use twinflow_core::animation::{generate_visemes, Viseme};
use twinflow_core::config::SessionConfig;
use twinflow_core::fsm::{Action, Fsm, PipelineEvent, PipelineState, Stage};
use twinflow_core::harness::{
    mock_factory, run_scenario, run_suite, Classification, Oracle, Phase, Scenario, SuiteResult,
};
use twinflow_core::metrics::{summarize_samples, MetricsRecorder, StageLatencies, StatsSummary};
use twinflow_core::model::{
    AudioRef, CameraRole, ConversationHistory, EmotionLabel, EmotionTag, ImageRef, ObjectTag, Role, TimestampMs, Turn,
    VisualObservation,
};
use twinflow_core::persistence::{SessionMeta, TranscriptStore};
use twinflow_core::pipeline::{NullSink, Session};
use twinflow_core::prompt::{construct, MessageRole, PromptError};

type Outcome = Result<String, String>;

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

async fn paper_suite() -> Result<(SuiteResult, f64), String> {
    let started = Instant::now();
    let script = MockScript::parse(&fixture("paper_transcript_mock.toml")).map_err(|e| e.to_string())?;
    let result = run_suite(&fixture("paper_suite.toml"), SessionConfig::default(), mock_factory(script))
        .await
        .map_err(|e| e.to_string())?;
    Ok((result, started.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- criterion 1

async fn table1() -> Outcome {
    let (result, secs) = paper_suite().await?;
    let expected = [
        (Phase::Precheck, 10, 5, 5, 0),
        (Phase::Identification, 10, 10, 0, 0),
        (Phase::Guidance, 7, 7, 0, 0),
        (Phase::Recommendations, 10, 10, 0, 0),
        (Phase::Emotional, 11, 11, 0, 0),
        (Phase::Verification, 6, 3, 3, 0),
    ];
    ensure(result.outcomes.len() == 54, || format!("{} scenarios, expected 54", result.outcomes.len()))?;
    for (phase, n, s, c, f) in expected {
        let row = result.report.row(phase).ok_or_else(|| format!("no row for {phase:?}"))?;
        ensure((row.scenarios, row.success, row.conditional_success, row.failure) == (n, s, c, f), || {
            format!("{phase:?}: got {row:?}, expected {n}/{s}/{c}/{f}")
        })?;
        ensure(row.success + row.conditional_success + row.failure == row.scenarios, || {
            format!("{phase:?}: counts do not sum")
        })?;
    }
    ensure(secs < 10.0, || format!("suite took {secs:.2} s"))?;
    let again = paper_suite().await?.0;
    ensure(again.report.render_table() == result.report.render_table(), || "report not byte-identical".into())?;
    ensure(again.report.render_csv() == result.report.render_csv(), || "csv not byte-identical".into())?;
    Ok(format!("all six phase rows match, {secs:.2} s, report deterministic"))
}

// ---------------------------------------------------------------- criterion 2

async fn table2() -> Outcome {
    let (result, _) = paper_suite().await?;
    let ids: Vec<String> = (1..=10).map(|i| format!("1.{i}")).collect();
    let attempts: Vec<u32> = ids
        .iter()
        .map(|id| {
            result
                .outcomes
                .iter()
                .find(|o| &o.scenario_id == id)
                .map(|o| o.feedback_attempts_used)
                .ok_or_else(|| format!("scenario {id} missing"))
        })
        .collect::<Result<_, _>>()?;
    ensure(attempts == [0, 0, 0, 2, 0, 5, 4, 3, 3, 0], || format!("attempt vector {attempts:?}"))?;
    Ok(format!("pre-check attempts {attempts:?}"))
}

// ---------------------------------------------------------------- criterion 3

async fn verification_attempts() -> Outcome {
    let (result, _) = paper_suite().await?;
    let expected = [
        ("5.1", Classification::ConditionalSuccess, 1),
        ("5.2", Classification::Success, 0),
        ("5.3", Classification::ConditionalSuccess, 1),
        ("5.4", Classification::Success, 0),
        ("5.5", Classification::ConditionalSuccess, 1),
        ("5.6", Classification::Success, 0),
    ];
    for (id, class, attempts) in expected {
        let o = result.outcomes.iter().find(|o| o.scenario_id == id).ok_or_else(|| format!("{id} missing"))?;
        ensure(o.classification == class && o.feedback_attempts_used == attempts, || {
            format!("{id}: {:?} with {} attempts", o.classification, o.feedback_attempts_used)
        })?;
    }
    Ok("5.1/5.3/5.5 conditional at 1 attempt, 5.2/5.4/5.6 success".into())
}

// ---------------------------------------------------------------- criterion 4

/// Independent statistics: unsorted sums, two-pass variance, rank by search.
fn oracle_summary(samples: &[f64]) -> StatsSummary {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rank = 1;
    while 100 * rank < 99 * n {
        rank += 1;
    }
    StatsSummary {
        n,
        mean_ms: mean,
        std_ms: var.sqrt(),
        p99_ms: sorted[rank - 1],
        min_ms: sorted[0],
        max_ms: sorted[n - 1],
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn metrics_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (total_mean, total_std) = (27_960.0, 5_500.0);
    let parts = [("stt", 1300.0, 250.0), ("vision", 2130.0, 320.0), ("llm", 9720.0, 2900.0), ("tts", 930.0, 180.0)];
    let residual_mean = total_mean - parts.iter().map(|p| p.1).sum::<f64>();
    let residual_std = (total_std * total_std - parts.iter().map(|p| p.2 * p.2).sum::<f64>()).sqrt();

    let mut draw = |mean: f64, std: f64| {
        let dist = Normal::new(mean, std).unwrap();
        loop {
            let x: f64 = dist.sample(&mut rng);
            if x >= 0.0 {
                break x;
            }
        }
    };
    let recorder = MetricsRecorder::new();
    for _ in 0..10_000 {
        let l = StageLatencies::from_parts(
            draw(1300.0, 250.0),
            draw(2130.0, 320.0),
            draw(9720.0, 2900.0),
            draw(930.0, 180.0),
            draw(residual_mean, residual_std),
        );
        recorder.record("synthetic", l).map_err(|e| e.to_string())?;
    }

    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let targets =
        parts.iter().copied().chain([("residual", residual_mean, residual_std), ("total", total_mean, total_std)]);
    for ((name, mean, std), (_, s)) in targets.zip(recorder.summarize_all().map_err(|e| e.to_string())?) {
        let dm = (s.mean_ms - mean).abs() / mean;
        let ds = (s.std_ms - std).abs() / std;
        if dm > 0.02 {
            failures.push(format!("{name} mean {:.1} off by {:.2}%", s.mean_ms, dm * 100.0));
        }
        if ds > 0.05 {
            failures.push(format!("{name} std {:.1} off by {:.2}%", s.std_ms, ds * 100.0));
        }
        if name == "llm" || name == "total" {
            let target = if name == "llm" { 14_680.0 } else { 40_860.0 };
            let dp = (s.p99_ms - target) / target;
            notes.push(format!("{name} p99 {:.0} ({:+.1}% vs {target:.0})", s.p99_ms, dp * 100.0));
            if dp.abs() > 0.10 {
                failures.push(format!("{name} p99 {:.0} is {:+.1}% from {target:.0}", s.p99_ms, dp * 100.0));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1_000 {
        let n = rng.random_range(1..=400);
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60_000.0)).collect();
        let got = summarize_samples(&samples).map_err(|e| e.to_string())?;
        let want = oracle_summary(&samples);
        let ok = got.n == want.n
            && rel_close(got.mean_ms, want.mean_ms, 1e-9)
            && rel_close(got.std_ms, want.std_ms, 1e-9)
            && got.p99_ms == want.p99_ms
            && got.min_ms == want.min_ms
            && got.max_ms == want.max_ms;
        if !ok {
            failures.push(format!("oracle mismatch on set {case}: {got:?} vs {want:?}"));
            break;
        }
    }

    if failures.is_empty() {
        Ok(format!("means/stds within tolerance, {}, oracle agrees on 1000 sets", notes.join(", ")))
    } else {
        Err(format!("{} [means/stds otherwise within tolerance; {}]", failures.join("; "), notes.join(", ")))
    }
}

// ---------------------------------------------------------------- criterion 5

/// Expected classification from the definitions, by direct enumeration.
fn expected_outcome(seq: &[bool], limit: usize) -> (Classification, Option<usize>) {
    let window = &seq[..seq.len().min(limit + 1)];
    match window.iter().position(|p| *p) {
        Some(0) => (Classification::Success, Some(0)),
        Some(i) => (Classification::ConditionalSuccess, Some(i)),
        None => (Classification::Failure, None),
    }
}

async fn classification_totality() -> Outcome {
    let limit = 5usize;
    let scenario = Scenario {
        id: "t".into(),
        phase: Phase::Precheck,
        initial_user_text: "check".into(),
        fixtures: vec![],
        oracle: Oracle { contains: vec!["pass".into()], ..Oracle::default() },
        feedback_paragraphs: (1..=limit).map(|i| format!("feedback {i}")).collect(),
        note: None,
    };
    let mut count = 0;
    for len in 0..=6usize {
        for bits in 0..(1u32 << len) {
            let seq: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let script = MockScript::sequential(seq.iter().map(|p| Exchange::reply(if *p { "pass" } else { "miss" })));
            let mut session = Session::new(
                "t",
                SessionConfig::default(),
                Backends::mock(&script),
                Arc::new(MetricsRecorder::new()),
                Arc::new(NullSink),
            )
            .map_err(|e| e.to_string())?;
            let got = run_scenario(&scenario, &mut session).await;
            let (class, attempts) = expected_outcome(&seq, limit);
            ensure(got.classification == class, || format!("{seq:?}: {:?} vs {class:?}", got.classification))?;
            if let Some(a) = attempts {
                ensure(got.feedback_attempts_used as usize == a, || {
                    format!("{seq:?}: {} attempts vs {a}", got.feedback_attempts_used)
                })?;
            }
            ensure(got.feedback_attempts_used as usize <= limit, || format!("{seq:?}: attempts exceed limit"))?;
            ensure(session.state().is_idle(), || format!("{seq:?}: session left {}", session.state().name()))?;
            count += 1;
        }
    }
    Ok(format!("{count} pass/fail sequences classified as enumerated, attempts <= {limit}"))
}

// ---------------------------------------------------------------- criterion 6

fn envelope() -> ResponseEnvelope {
    ResponseEnvelope {
        reply_text: "ok".into(),
        emotion: None,
        objects: vec![],
        raw: serde_json::Value::Null,
        latency_ms: 1.0,
    }
}

fn random_event(rng: &mut ChaCha8Rng, state: &PipelineState) -> PipelineEvent {
    use PipelineEvent as E;
    let stage = Stage::ALL[rng.random_range(0..4)];
    let all = |rng: &mut ChaCha8Rng| match rng.random_range(0..9) {
        0 => E::UserSpeechStart,
        1 => E::UserSpeechEnd { audio: None },
        2 => E::TranscriptReady { text: "hi".into(), latency_ms: 1.0 },
        3 => E::VisualCaptured { observations: vec![] },
        4 => E::LlmResponseReady { envelope: envelope(), latency_ms: 1.0 },
        5 => E::AudioReady { audio: AudioRef::Fixture { name: "a".into() }, duration_ms: 10, latency_ms: 1.0 },
        6 => E::SpeechPlaybackComplete,
        7 => E::StageTimeout { stage },
        _ => E::Reset,
    };
    if rng.random_bool(0.25) {
        return all(rng);
    }
    // Bias towards the event that advances the cycle.
    match state.name() {
        "idle" => E::UserSpeechStart,
        "listening" if rng.random_bool(0.5) => E::VisualCaptured { observations: vec![] },
        "listening" => E::UserSpeechEnd { audio: None },
        "transcribing" if rng.random_bool(0.3) => E::VisualCaptured { observations: vec![] },
        "transcribing" => {
            let text = if rng.random_bool(0.1) { "" } else { "hello" };
            E::TranscriptReady { text: text.into(), latency_ms: 1.0 }
        }
        "thinking" => match rng.random_range(0..3) {
            0 => E::VisualCaptured { observations: vec![] },
            1 => E::LlmResponseReady { envelope: envelope(), latency_ms: 1.0 },
            _ => E::AudioReady { audio: AudioRef::Fixture { name: "a".into() }, duration_ms: 10, latency_ms: 1.0 },
        },
        "speaking" if rng.random_bool(0.2) => E::UserSpeechStart,
        "speaking" => E::SpeechPlaybackComplete,
        _ => E::Reset,
    }
}

/// Transition table: (from, to, event) triples that may change the state name.
fn legal(from: &str, to: &str, event: &PipelineEvent, barge_in: bool) -> bool {
    use PipelineEvent as E;
    if from == to {
        return true;
    }
    if to == "faulted" {
        return matches!(event, E::StageTimeout { .. });
    }
    matches!(
        (from, to, event),
        ("idle", "listening", E::UserSpeechStart)
            | ("listening", "transcribing", E::UserSpeechEnd { .. })
            | ("transcribing", "thinking", E::TranscriptReady { .. })
            | ("transcribing", "idle", E::TranscriptReady { .. })
            | ("thinking", "speaking", E::AudioReady { .. })
            | ("speaking", "idle", E::SpeechPlaybackComplete)
            | ("faulted", "idle", E::Reset)
    ) || (barge_in && matches!((from, to, event), ("speaking", "listening", E::UserSpeechStart)))
}

fn fsm_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cycles_total = 0;
    for seq in 0..1_000 {
        let barge_in = rng.random_bool(0.5);
        let fsm = Fsm::new(barge_in);
        let mut state = PipelineState::Idle;
        let (mut commits, mut cycles) = (0, 0);
        let len = rng.random_range(1..80);
        for _ in 0..len {
            let event = random_event(&mut rng, &state);
            let (next, actions) = fsm.step(&state, &event);
            ensure(fsm.step(&state, &event) == (next.clone(), actions.clone()), || "step not deterministic".into())?;
            let (from, to) = (state.name(), next.name());
            ensure(legal(from, to, &event, barge_in), || {
                format!("sequence {seq}: illegal {from} -> {to} on {}", event.name())
            })?;
            let n_commit = actions.iter().filter(|a| matches!(a, Action::CommitTurn)).count();
            let completes = from == "speaking"
                && (matches!(event, PipelineEvent::SpeechPlaybackComplete)
                    || (barge_in && matches!(event, PipelineEvent::UserSpeechStart)));
            ensure(n_commit == usize::from(completes), || {
                format!("sequence {seq}: {n_commit} commits on {from} -> {to} ({})", event.name())
            })?;
            if from == "speaking" && !barge_in && matches!(event, PipelineEvent::UserSpeechStart) {
                ensure(next == state && matches!(actions.as_slice(), [Action::IgnoredEvent { .. }]), || {
                    format!("sequence {seq}: barge-in off but speaking reacted to speech")
                })?;
            }
            if from == "transcribing" && to == "thinking" {
                ensure(
                    actions.iter().any(|a| {
                        matches!(a, Action::EmitAnimationCue { cue } if *cue == twinflow_core::animation::CueKind::Thinking)
                    }),
                    || "no thinking cue".into(),
                )?;
            }
            if completes {
                cycles += 1;
            }
            commits += n_commit;
            state = next;
        }
        ensure(commits == cycles, || format!("sequence {seq}: {commits} commits for {cycles} cycles"))?;
        cycles_total += cycles;
    }

    // Liveness on the canonical scripted sequence.
    let fsm = Fsm::new(false);
    let script = [
        PipelineEvent::UserSpeechStart,
        PipelineEvent::UserSpeechEnd { audio: None },
        PipelineEvent::TranscriptReady { text: "hello".into(), latency_ms: 1.0 },
        PipelineEvent::VisualCaptured { observations: vec![] },
        PipelineEvent::LlmResponseReady { envelope: envelope(), latency_ms: 1.0 },
        PipelineEvent::AudioReady { audio: AudioRef::Fixture { name: "a".into() }, duration_ms: 10, latency_ms: 1.0 },
        PipelineEvent::SpeechPlaybackComplete,
    ];
    let mut state = PipelineState::Idle;
    let mut commits = 0;
    for e in &script {
        let (next, actions) = fsm.step(&state, e);
        commits += actions.iter().filter(|a| matches!(a, Action::CommitTurn)).count();
        state = next;
    }
    ensure(state.is_idle() && commits == 1, || {
        format!("scripted cycle ended {} with {commits} commits", state.name())
    })?;
    Ok(format!("1000 sequences, {cycles_total} completed cycles, one commit each"))
}

// ---------------------------------------------------------------- criterion 7

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'e', 'i', 'o', 'u', 'm', 'b', 'p', 'f', 'v', 'l', 'w', 'q', 't', 'k', 's', 'r', 'x', 'y', 'z', ' ', ' ',
        ',', '.', '!', '?', '\'', '3', 'A', 'M', 'O', 'é', 'ß', '字', '-',
    ];
    let len = rng.random_range(0..120);
    (0..len).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn viseme_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1_000 {
        let text = random_text(&mut rng);
        let d: u64 = if rng.random_bool(0.2) { rng.random_range(1..=60) } else { rng.random_range(1..=120_000) };
        let track = generate_visemes(&text, d).map_err(|e| format!("case {case}: {e}"))?;
        let segs = &track.segments;
        ensure(track.total_duration_ms == d && !segs.is_empty(), || format!("case {case}: bad track header"))?;
        ensure(segs[0].start_ms == 0 && segs[segs.len() - 1].end_ms == d, || format!("case {case}: ends"))?;
        for (i, s) in segs.iter().enumerate() {
            ensure(s.start_ms < s.end_ms, || format!("case {case}: empty segment {i}"))?;
            if i > 0 {
                ensure(segs[i - 1].end_ms == s.start_ms, || format!("case {case}: gap/overlap at {i}"))?;
                ensure(segs[i - 1].start_ms < s.start_ms, || format!("case {case}: starts not increasing"))?;
            }
        }
        ensure(segs.iter().map(|s| s.end_ms - s.start_ms).sum::<u64>() == d, || format!("case {case}: sum"))?;
        let tail = (d * 2 / 100).max(50).min(d);
        let last = segs[segs.len() - 1];
        ensure(last.viseme == Viseme::Rest && last.end_ms - last.start_ms >= tail, || {
            format!("case {case}: tail {last:?} shorter than {tail} (text {text:?}, d {d})")
        })?;
        if text.is_empty() {
            ensure(segs.len() == 1, || format!("case {case}: empty text not degenerate"))?;
        }
    }
    let empty = generate_visemes("", 0).map_err(|e| e.to_string())?;
    ensure(
        empty.total_duration_ms == 0 && empty.segments.len() == 1 && empty.segments[0].viseme == Viseme::Rest,
        || "empty track not degenerate".into(),
    )?;
    ensure(generate_visemes("a", 0).is_err(), || "non-empty text at 0 ms accepted".into())?;
    Ok("1000 random tracks cover [0, d] exactly with closed tail".into())
}

// ---------------------------------------------------------------- criterion 8

fn random_turn_pair(rng: &mut ChaCha8Rng, index: u64) -> (Turn, Turn) {
    let words = ["part", "screw", "barrel", "stock", "ok", "check", "again", "ñ", "字", "\"quoted\"", "a\nb"];
    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..30);
        (0..n).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    let mut user = Turn::new(index, Role::User, text(rng), TimestampMs(rng.random_range(0..2_000_000_000_000)));
    let mut assistant =
        Turn::new(index + 1, Role::Assistant, text(rng), user.created_at.plus_ms(rng.random_range(0..60_000)));
    if rng.random_bool(0.5) {
        let l = StageLatencies::from_parts(
            rng.random_range(0.0..3000.0),
            rng.random_range(0.0..3000.0),
            rng.random_range(0.0..20_000.0),
            rng.random_range(0.0..2000.0),
            rng.random_range(0.0..20_000.0),
        );
        user.stage_latencies = Some(l);
        assistant.stage_latencies = Some(l);
    }
    if rng.random_bool(0.5) {
        assistant.emotion = Some(EmotionTag::new(EmotionLabel::Frustrated, rng.random_range(0.0..=1.0)).unwrap());
        assistant.objects = vec![ObjectTag::new("display stand", rng.random_bool(0.5))];
    }
    (user, assistant)
}

fn persistence_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut torn_writes = 0;
    for s in 0..100 {
        let id = format!("session-{s}");
        let config = SessionConfig { history_budget: rng.random_range(20..2_000), ..SessionConfig::default() };
        let mut history =
            ConversationHistory::new(config.system_prompt.clone(), config.history_budget).map_err(|e| e.to_string())?;
        let store = TranscriptStore::open(dir.path()).map_err(|e| e.to_string())?;
        store
            .create(&SessionMeta { session_id: id.clone(), created_at: TimestampMs(s), config })
            .map_err(|e| e.to_string())?;

        let turns = rng.random_range(0..=20u64) / 2 * 2;
        let kill_at = rng.random_range(0..=turns / 2);
        for pair in 0..turns / 2 {
            let (u, a) = random_turn_pair(&mut rng, pair * 2);
            if pair == kill_at {
                // Crash in the middle of writing this pair, then resume from disk.
                let mut bytes = serde_json::to_vec(&u).unwrap();
                bytes.push(b'\n');
                bytes.extend(serde_json::to_vec(&a).unwrap());
                bytes.push(b'\n');
                let cut = rng.random_range(0..bytes.len());
                let mut f = OpenOptions::new().append(true).open(store.transcript_path(&id)).unwrap();
                f.write_all(&bytes[..cut]).unwrap();
                drop(f);
                torn_writes += 1;

                let reopened = TranscriptStore::open(dir.path()).map_err(|e| e.to_string())?;
                let (_, resumed) = reopened.replay_history(&id).map_err(|e| e.to_string())?;
                ensure(resumed == history, || {
                    format!(
                        "{id}: resumed history differs after torn write at {cut}: {:?} vs {:?}",
                        resumed.turns().iter().map(|t| t.turn_index).collect::<Vec<_>>(),
                        history.turns().iter().map(|t| t.turn_index).collect::<Vec<_>>()
                    )
                })?;
            }
            store.append_pair(&id, &u, &a).map_err(|e| e.to_string())?;
            history.append_turn(u).map_err(|e| e.to_string())?;
            history.append_turn(a).map_err(|e| e.to_string())?;
        }

        let reopened = TranscriptStore::open(dir.path()).map_err(|e| e.to_string())?;
        let (meta, replayed) = reopened.replay_history(&id).map_err(|e| e.to_string())?;
        ensure(replayed == history, || format!("{id}: replayed history differs"))?;
        ensure(meta.session_id == id, || format!("{id}: meta mismatch"))?;
        let records = reopened.recover(&id).map_err(|e| e.to_string())?;
        ensure(records.len() as u64 == turns, || format!("{id}: {} records for {turns} turns", records.len()))?;
        for pair in records.chunks(2) {
            ensure(pair.len() == 2 && pair[0].role == Role::User && pair[1].role == Role::Assistant, || {
                format!("{id}: record stream is not user/assistant pairs")
            })?;
        }
    }
    Ok(format!("100 sessions round-trip, {torn_writes} torn writes recovered"))
}

// ---------------------------------------------------------------- criterion 9

fn oracle_weight(text: &str, images: usize) -> u64 {
    (text.chars().count() as u64).div_ceil(4) + 1000 * images as u64
}

fn prompt_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    let mut budget_errors = 0;
    for case in 0..1_000 {
        let budget = rng.random_range(1..6_000);
        let system: String = "s".repeat(rng.random_range(0..400));
        let Ok(mut history) = ConversationHistory::new(system.clone(), budget) else {
            return Err("history rejected positive budget".into());
        };
        let n = rng.random_range(0..30);
        let mut all = Vec::new();
        for i in 0..n {
            let role = if i % 2 == 0 { Role::User } else { Role::Assistant };
            let text: String = "x".repeat(rng.random_range(1..800));
            let turn = Turn::new(i, role, text, TimestampMs(i as i64));
            all.push(turn.clone());
            history.append_turn(turn).map_err(|e| e.to_string())?;
        }
        let user_text: String = "u".repeat(rng.random_range(1..200));
        let images = rng.random_range(0..3usize);
        let observations: Vec<VisualObservation> = (0..images)
            .map(|i| VisualObservation {
                camera_role: CameraRole::ALL[i % 2],
                image_ref: ImageRef::Fixture { name: format!("f{i}") },
                captured_at: TimestampMs(0),
                capture_latency_ms: 0.0,
            })
            .collect();

        let fixed = oracle_weight(&system, 0) + oracle_weight(&user_text, images);
        let result = construct(&history, &user_text, &observations);
        if fixed > budget {
            ensure(matches!(result, Err(PromptError::Budget { .. })), || {
                format!("case {case}: expected budget error")
            })?;
            budget_errors += 1;
            continue;
        }
        let prompt = result.map_err(|e| format!("case {case}: {e}"))?;
        ensure(construct(&history, &user_text, &observations) == Ok(prompt.clone()), || "not deterministic".into())?;

        // Brute force: the longest suffix of retained history that fits.
        let turns = history.turns();
        let k = (0..=turns.len())
            .rev()
            .find(|&k| {
                fixed + turns[turns.len() - k..].iter().map(|t| oracle_weight(&t.text, 0)).sum::<u64>() <= budget
            })
            .unwrap();
        let suffix = &turns[turns.len() - k..];
        let msgs = &prompt.messages;
        ensure(msgs.len() == k + 2, || format!("case {case}: kept {} turns, expected {k}", msgs.len() - 2))?;
        ensure(msgs[0].role == MessageRole::System && msgs[0].text == system, || format!("case {case}: head"))?;
        let last = &msgs[msgs.len() - 1];
        ensure(last.role == MessageRole::User && last.text == user_text && last.attachments.len() == images, || {
            format!("case {case}: tail")
        })?;
        for (m, t) in msgs[1..msgs.len() - 1].iter().zip(suffix) {
            ensure(m.text == t.text && m.attachments.is_empty(), || format!("case {case}: history order"))?;
        }
        let weight = fixed + suffix.iter().map(|t| oracle_weight(&t.text, 0)).sum::<u64>();
        ensure(prompt.total_weight == weight && weight <= budget, || {
            format!("case {case}: weight {} vs {weight} (budget {budget})", prompt.total_weight)
        })?;
        // Retained history is itself a suffix of everything appended.
        ensure(all.ends_with(turns), || format!("case {case}: history is not a suffix"))?;
        checked += 1;
    }
    Ok(format!("{checked} prompts match brute-force suffix, {budget_errors} budget errors"))
}

fn main() {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let results: Vec<(u8, &str, Outcome)> = vec![
        (1, "Table 1 phase counts", rt.block_on(table1())),
        (2, "Table 2 pre-check attempts", rt.block_on(table2())),
        (3, "verification-phase attempts", rt.block_on(verification_attempts())),
        (4, "metrics consistency", metrics_consistency()),
        (5, "classification totality", rt.block_on(classification_totality())),
        (6, "FSM liveness/safety", fsm_properties()),
        (7, "viseme invariants", viseme_invariants()),
        (8, "persistence round-trip", persistence_round_trip()),
        (9, "prompt determinism and budget", prompt_budget()),
    ];
    let mut failed = HashSet::new();
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
            Err(detail) => {
                println!("criterion {n} FAIL  {name}: {detail}");
                failed.insert(*n);
            }
        }
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
