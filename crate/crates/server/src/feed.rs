//! Per-session event fan-out.
//!
//! Every event is appended to a retained log and broadcast under one lock, so
//! all subscribers observe the same total order. A new subscriber receives the
//! retained backlog (optionally only events after a given `seq`) followed by
//! live events, with no gap or duplicate between the two. Each subscriber has
//! a bounded buffer; one that falls behind is disconnected and can reconnect
//! with `since` set to the last `seq` it saw.

use std::collections::VecDeque;

use parking_lot::Mutex;
use tokio::sync::broadcast;
use twinflow_core::fsm::PipelineState;
use twinflow_core::pipeline::{EventKind, EventSink, SessionEvent};

const RETAINED_EVENTS: usize = 10_000;

struct Inner {
    log: VecDeque<SessionEvent>,
    state: PipelineState,
}

pub struct EventFeed {
    inner: Mutex<Inner>,
    tx: broadcast::Sender<SessionEvent>,
}

impl EventFeed {
    pub fn new(buffer: usize) -> Self {
        let (tx, _) = broadcast::channel(buffer.max(1));
        Self { inner: Mutex::new(Inner { log: VecDeque::new(), state: PipelineState::Idle }), tx }
    }

    /// Latest pipeline state, readable while a turn holds the session.
    pub fn state(&self) -> PipelineState {
        self.inner.lock().state.clone()
    }

    pub fn subscribe(&self, since: Option<u64>) -> (Vec<SessionEvent>, broadcast::Receiver<SessionEvent>) {
        let inner = self.inner.lock();
        let rx = self.tx.subscribe();
        let backlog = inner.log.iter().filter(|e| since.is_none_or(|s| e.seq > s)).cloned().collect();
        (backlog, rx)
    }
}

impl EventSink for EventFeed {
    fn emit(&self, event: SessionEvent) {
        let mut inner = self.inner.lock();
        if let EventKind::StateChanged { to, .. } = &event.kind {
            inner.state = to.clone();
        }
        if inner.log.len() == RETAINED_EVENTS {
            inner.log.pop_front();
        }
        inner.log.push_back(event.clone());
        let _ = self.tx.send(event);
    }
}
