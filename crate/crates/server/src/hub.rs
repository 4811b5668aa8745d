//! Sessions currently driven by this process. Each has one writer thread
//! (its pipeline) and any number of readers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use synthkit_core::{Phase, Session, SessionEvent, SessionState};
use tokio::sync::watch;

use crate::gate::ChannelGate;

pub struct LiveSession {
    events: RwLock<Vec<SessionEvent>>,
    state: Mutex<SessionState>,
    pub gate: Arc<ChannelGate>,
    running: AtomicBool,
    error: Mutex<Option<String>>,
    seq: watch::Sender<u64>,
}

impl LiveSession {
    fn new(backlog: Vec<SessionEvent>, state: SessionState, gate: Arc<ChannelGate>) -> Self {
        let last = state.last_seq;
        Self {
            events: RwLock::new(backlog),
            state: Mutex::new(state),
            gate,
            running: AtomicBool::new(true),
            error: Mutex::new(None),
            seq: watch::channel(last).0,
        }
    }

    fn record(&self, event: &SessionEvent) {
        let mut state = self.state.lock().unwrap();
        if let Err(e) = state.apply(event) {
            tracing::error!(seq = event.seq, "live mirror rejected an event: {e}");
        }
        self.events.write().unwrap().push(event.clone());
        drop(state);
        self.seq.send_replace(event.seq);
    }

    fn finish(&self, error: Option<String>) {
        *self.error.lock().unwrap() = error;
        self.running.store(false, Ordering::SeqCst);
        // Wake subscribers so they notice the end of the stream.
        self.seq.send_modify(|_| {});
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> SessionState {
        self.state.lock().unwrap().clone()
    }

    pub fn phase(&self) -> Phase {
        self.state.lock().unwrap().phase
    }

    pub fn error(&self) -> Option<String> {
        self.error.lock().unwrap().clone()
    }

    /// Events with seq greater than `cursor`, in order.
    pub fn events_after(&self, cursor: u64) -> Vec<SessionEvent> {
        let events = self.events.read().unwrap();
        let start = events.partition_point(|e| e.seq <= cursor);
        events[start..].to_vec()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.seq.subscribe()
    }
}

#[derive(Default)]
pub struct Hub {
    sessions: Mutex<HashMap<String, Arc<LiveSession>>>,
}

impl Hub {
    pub fn get(&self, id: &str) -> Option<Arc<LiveSession>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    /// Runs `session` on its own thread. `backlog` are the events already
    /// stored for it.
    pub fn launch(&self, session: Session, backlog: Vec<SessionEvent>, gate: Arc<ChannelGate>) -> Arc<LiveSession> {
        let id = session.id().to_string();
        let live = Arc::new(LiveSession::new(backlog, session.state().clone(), gate.clone()));
        self.sessions.lock().unwrap().insert(id.clone(), live.clone());
        let sink = {
            let live = live.clone();
            Arc::new(move |event: &SessionEvent| live.record(event))
        };
        let mut session = session.with_sink(sink).with_gate(gate);
        let worker = live.clone();
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || {
                let outcome = session.run();
                if let Err(e) = &outcome {
                    tracing::warn!(session = %id, "session stopped: {e}");
                }
                worker.finish(outcome.err().map(|e| e.to_string()));
            })
            .expect("spawn session thread");
        live
    }
}
