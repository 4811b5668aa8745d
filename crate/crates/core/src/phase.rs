//! Session phases and the legal transitions between them.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::SessionState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Intake,
    Retrieval,
    Outline,
    DetailedDesign,
    ModuleCodegen,
    Integration,
    Debugging,
    Optimizing,
    AwaitingFeedback,
    Finalized,
    Failed,
}

impl Phase {
    pub const ALL: [Phase; 11] = [
        Phase::Intake,
        Phase::Retrieval,
        Phase::Outline,
        Phase::DetailedDesign,
        Phase::ModuleCodegen,
        Phase::Integration,
        Phase::Debugging,
        Phase::Optimizing,
        Phase::AwaitingFeedback,
        Phase::Finalized,
        Phase::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Finalized | Phase::Failed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PhaseEvent {
    RetrievalStarted,
    RetrievalComplete,
    OutlineReady,
    DesignReady,
    ModulesReady,
    Integrated,
    Executable,
    DebugExhausted,
    IterationDone { index: u32, total: u32 },
    Continue,
    RetryDebug,
    Finalize,
    Fail { reason: String },
}

impl PhaseEvent {
    /// One representative of every event variant.
    pub fn samples() -> Vec<PhaseEvent> {
        vec![
            PhaseEvent::RetrievalStarted,
            PhaseEvent::RetrievalComplete,
            PhaseEvent::OutlineReady,
            PhaseEvent::DesignReady,
            PhaseEvent::ModulesReady,
            PhaseEvent::Integrated,
            PhaseEvent::Executable,
            PhaseEvent::DebugExhausted,
            PhaseEvent::IterationDone { index: 0, total: 5 },
            PhaseEvent::Continue,
            PhaseEvent::RetryDebug,
            PhaseEvent::Finalize,
            PhaseEvent::Fail { reason: String::new() },
        ]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("illegal transition: {event:?} in phase {phase}")]
pub struct IllegalTransition {
    pub phase: Phase,
    pub event: PhaseEvent,
}

/// The transition table. `None` marks an illegal (phase, event) pair.
pub fn transition(phase: Phase, event: &PhaseEvent) -> Option<Phase> {
    use Phase as P;
    use PhaseEvent as E;
    let next = match (phase, event) {
        (P::Finalized | P::Failed, _) => return None,
        (_, E::Fail { .. }) => P::Failed,
        (P::Intake, E::RetrievalStarted) => P::Retrieval,
        (P::Retrieval, E::RetrievalComplete) => P::Outline,
        (P::Outline, E::OutlineReady) => P::DetailedDesign,
        (P::DetailedDesign, E::DesignReady) => P::ModuleCodegen,
        (P::ModuleCodegen, E::ModulesReady) => P::Integration,
        (P::Integration, E::Integrated) => P::Debugging,
        (P::Debugging, E::Executable) => P::Optimizing,
        (P::Debugging, E::DebugExhausted) => P::AwaitingFeedback,
        (P::Optimizing, E::IterationDone { .. }) => P::AwaitingFeedback,
        (P::AwaitingFeedback, E::Continue) => P::Optimizing,
        (P::AwaitingFeedback, E::RetryDebug) => P::Debugging,
        (P::AwaitingFeedback, E::Finalize) => P::Finalized,
        _ => return None,
    };
    Some(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub from: Phase,
    pub to: Phase,
    pub event: PhaseEvent,
    pub at: DateTime<Utc>,
}

/// Applies `event` to the session phase, appending an audit entry. Illegal
/// events leave `state` untouched.
pub fn advance_phase(
    state: &mut SessionState,
    event: PhaseEvent,
    at: DateTime<Utc>,
) -> Result<Phase, IllegalTransition> {
    let from = state.phase;
    let Some(to) = transition(from, &event) else {
        return Err(IllegalTransition { phase: from, event });
    };
    state.phase = to;
    if to.is_terminal() {
        state.finished_at = Some(at);
    }
    state.audit.push(AuditEntry { from, to, event, at });
    Ok(to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn state() -> SessionState {
        SessionState::new("s-1")
    }

    #[test]
    fn out_of_order_event_is_rejected() {
        let mut s = state();
        let before = s.clone();
        let err = advance_phase(&mut s, PhaseEvent::RetrievalComplete, Utc::now()).unwrap_err();
        assert_eq!(err.phase, Phase::Intake);
        assert_eq!(s, before);
    }

    #[test]
    fn iteration_done_opens_feedback_gate() {
        let mut s = state();
        s.phase = Phase::Optimizing;
        let to = advance_phase(&mut s, PhaseEvent::IterationDone { index: 4, total: 5 }, Utc::now()).unwrap();
        assert_eq!(to, Phase::AwaitingFeedback);
        assert_eq!(s.audit.len(), 1);
    }

    #[test]
    fn full_chain_reaches_finalized() {
        let mut s = state();
        let mut chain = vec![
            PhaseEvent::RetrievalStarted,
            PhaseEvent::RetrievalComplete,
            PhaseEvent::OutlineReady,
            PhaseEvent::DesignReady,
            PhaseEvent::ModulesReady,
            PhaseEvent::Integrated,
            PhaseEvent::Executable,
        ];
        for index in 0..5 {
            chain.push(PhaseEvent::IterationDone { index, total: 5 });
            chain.push(if index < 4 { PhaseEvent::Continue } else { PhaseEvent::Finalize });
        }
        for event in chain {
            advance_phase(&mut s, event, Utc::now()).unwrap();
        }
        assert_eq!(s.phase, Phase::Finalized);
        assert!(s.finished_at.is_some());
    }

    // Every (phase, event) pair is either in the hand-written edge list below
    // or rejected by the table.
    #[test]
    fn table_matches_edge_list() {
        let edges: BTreeSet<(Phase, &str, Phase)> = [
            (Phase::Intake, "retrieval_started", Phase::Retrieval),
            (Phase::Retrieval, "retrieval_complete", Phase::Outline),
            (Phase::Outline, "outline_ready", Phase::DetailedDesign),
            (Phase::DetailedDesign, "design_ready", Phase::ModuleCodegen),
            (Phase::ModuleCodegen, "modules_ready", Phase::Integration),
            (Phase::Integration, "integrated", Phase::Debugging),
            (Phase::Debugging, "executable", Phase::Optimizing),
            (Phase::Debugging, "debug_exhausted", Phase::AwaitingFeedback),
            (Phase::Optimizing, "iteration_done", Phase::AwaitingFeedback),
            (Phase::AwaitingFeedback, "continue", Phase::Optimizing),
            (Phase::AwaitingFeedback, "retry_debug", Phase::Debugging),
            (Phase::AwaitingFeedback, "finalize", Phase::Finalized),
        ]
        .into_iter()
        .chain(
            Phase::ALL
                .into_iter()
                .filter(|p| !p.is_terminal())
                .map(|p| (p, "fail", Phase::Failed)),
        )
        .collect();

        let mut seen = BTreeSet::new();
        for phase in Phase::ALL {
            for event in PhaseEvent::samples() {
                let name = serde_json::to_value(&event).unwrap()["type"].as_str().unwrap().to_string();
                if let Some(to) = transition(phase, &event) {
                    let key = edges
                        .iter()
                        .find(|(f, n, t)| *f == phase && *n == name && *t == to)
                        .unwrap_or_else(|| panic!("unexpected edge {phase} --{name}--> {to}"));
                    seen.insert(*key);
                }
            }
        }
        assert_eq!(seen, edges);
    }

    fn closure(start: Phase) -> BTreeSet<Phase> {
        let mut reached = BTreeSet::from([start]);
        loop {
            let mut grew = false;
            for phase in reached.clone() {
                for event in PhaseEvent::samples() {
                    if let Some(to) = transition(phase, &event) {
                        grew |= reached.insert(to);
                    }
                }
            }
            if !grew {
                return reached;
            }
        }
    }

    // Brute force: every event sequence of length <= 12 starting from Intake.
    // Illegal events leave the phase unchanged, so each sequence's end phase is
    // also reached by the sequence with its illegal events removed.
    #[test]
    fn reachable_phases_equal_table_closure() {
        fn walk(phase: Phase, depth: usize, reached: &mut BTreeSet<Phase>, visits: &mut u64) {
            *visits += 1;
            reached.insert(phase);
            if depth == 12 {
                return;
            }
            for event in PhaseEvent::samples() {
                let next = transition(phase, &event).unwrap_or(phase);
                if next != phase || transition(phase, &event).is_some() {
                    walk(next, depth + 1, reached, visits);
                }
            }
        }
        let mut reached = BTreeSet::new();
        let mut visits = 0;
        walk(Phase::Intake, 0, &mut reached, &mut visits);
        assert_eq!(reached, closure(Phase::Intake));
        assert_eq!(reached.len(), 11);
        assert!(visits > 12);
    }

    #[test]
    fn terminal_phases_reject_everything() {
        for phase in [Phase::Finalized, Phase::Failed] {
            for event in PhaseEvent::samples() {
                assert_eq!(transition(phase, &event), None);
            }
        }
    }
}
