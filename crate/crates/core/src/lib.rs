//! Core of `synthkit`: turns a structured problem description into an
//! executable sensor-data-processing program.
//!
//! The crate is organised around the session workflow:
//!
//! * [`problem`] and [`phase`] hold the user problem and the session state machine.
//! * [`llm`] is the chat backend abstraction with its tool-invocation loop.
//! * [`retrieval`] builds the per-session knowledge index.
//! * [`synthesis`] runs the staged outline / design / module / integration prompts.
//! * [`sandbox`] executes candidate programs.
//! * [`improve`] debugs, optimizes and selects the final program.
//! * [`state`], [`events`] and [`store`] make a session event-sourced and persistent.
//! * [`session`] drives one session end to end.

pub mod config;
pub mod events;
pub mod improve;
pub mod llm;
pub mod phase;
pub mod problem;
pub mod program;
pub mod retrieval;
pub mod sandbox;
pub mod session;
pub mod state;
pub mod store;
pub mod synthesis;
pub mod traffic;

pub use config::SessionConfig;
pub use events::{Artifact, EventKind, SessionEvent, StageName};
pub use phase::{advance_phase, IllegalTransition, Phase, PhaseEvent};
pub use problem::{ProblemError, UserProblem};
pub use program::{IterationRecord, Metric, Origin, SynthesizedProgram};
pub use session::{Backends, FeedbackGate, GateDecision, Session, SessionError};
pub use state::SessionState;
pub use store::{SessionStore, StoreError};
pub use traffic::{record_traffic, Exchange, TrafficTotals};
