//! Rendezvous between HTTP handlers and a session thread parked at a
//! feedback gate.

use std::sync::{Condvar, Mutex};

use synthkit_core::session::FeedbackGate;
use synthkit_core::state::FeedbackRequest;
use synthkit_core::GateDecision;

/// Holds at most one decision. The session thread blocks in `wait` until a
/// handler offers one.
#[derive(Default)]
pub struct ChannelGate {
    slot: Mutex<Option<GateDecision>>,
    ready: Condvar,
}

impl ChannelGate {
    pub fn new() -> Self {
        Self::default()
    }

    /// A gate whose first wait returns `decision` immediately.
    pub fn preloaded(decision: GateDecision) -> Self {
        Self { slot: Mutex::new(Some(decision)), ready: Condvar::new() }
    }

    /// Hands a decision to the waiting session. Fails when one is already
    /// pending and has not been picked up.
    pub fn offer(&self, decision: GateDecision) -> Result<(), GateDecision> {
        let mut slot = self.slot.lock().unwrap();
        if slot.is_some() {
            return Err(decision);
        }
        *slot = Some(decision);
        self.ready.notify_all();
        Ok(())
    }

    pub fn is_pending(&self) -> bool {
        self.slot.lock().unwrap().is_some()
    }
}

impl FeedbackGate for ChannelGate {
    fn wait(&self, _request: &FeedbackRequest) -> Option<GateDecision> {
        let mut slot = self.slot.lock().unwrap();
        loop {
            if let Some(decision) = slot.take() {
                return Some(decision);
            }
            slot = self.ready.wait(slot).unwrap();
        }
    }
}
