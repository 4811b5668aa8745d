//! Session events. The session log is the ordered list of these; the
//! session state is a fold over it (see [`crate::state`]).

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::llm::Message;
use crate::phase::{Phase, PhaseEvent};
use crate::problem::UserProblem;
use crate::program::{Baseline, IterationRecord, Metric, SynthesizedProgram};
use crate::retrieval::{Terminology, WebDocument};
use crate::sandbox::ExecutionReport;
use crate::synthesis::{AlgorithmOutline, CodeModule, DetailedDesign, GateReport};
use crate::traffic::Exchange;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Terminology,
    Relevance,
    Outline,
    DetailedDesign,
    ModuleCodegen,
    Integration,
    Debug,
    Optimize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    /// Messages exchanged with the model and the wire traffic they caused.
    Dialogue {
        messages: Vec<Message>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        exchanges: Vec<Exchange>,
    },
    Outline { outline: AlgorithmOutline },
    Design { design: DetailedDesign },
    Module { module: CodeModule },
    Program { program: SynthesizedProgram },
    Gate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<u32>,
        report: GateReport,
    },
    Baseline { baseline: Baseline },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        problem: UserProblem,
        config: SessionConfig,
    },
    PhaseChanged {
        from: Phase,
        to: Phase,
        event: PhaseEvent,
    },
    TerminologyFound {
        terms: Vec<Terminology>,
    },
    DocIndexed {
        document: WebDocument,
        chunks: usize,
    },
    StageArtifact {
        stage: StageName,
        artifact: Artifact,
    },
    ExecutionStarted {
        version: u32,
    },
    ExecutionFinished {
        version: u32,
        report: ExecutionReport,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric: Option<Metric>,
    },
    DebugRound {
        round: u32,
        from_version: u32,
        /// Absent when the fix never reached a new version (no code, gate failure).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to_version: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feedback: Option<String>,
    },
    IterationDone {
        record: IterationRecord,
    },
    FeedbackRequested {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        after_iteration: Option<u32>,
        reason: String,
    },
    FeedbackReceived {
        /// `None` means "continue without instructions".
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    Finalized {
        version: u32,
    },
    Warning {
        message: String,
    },
    Error {
        message: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionCreated { .. } => "session_created",
            EventKind::PhaseChanged { .. } => "phase_changed",
            EventKind::TerminologyFound { .. } => "terminology_found",
            EventKind::DocIndexed { .. } => "doc_indexed",
            EventKind::StageArtifact { .. } => "stage_artifact",
            EventKind::ExecutionStarted { .. } => "execution_started",
            EventKind::ExecutionFinished { .. } => "execution_finished",
            EventKind::DebugRound { .. } => "debug_round",
            EventKind::IterationDone { .. } => "iteration_done",
            EventKind::FeedbackRequested { .. } => "feedback_requested",
            EventKind::FeedbackReceived { .. } => "feedback_received",
            EventKind::Finalized { .. } => "finalized",
            EventKind::Warning { .. } => "warning",
            EventKind::Error { .. } => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Upper bound on one serialized event line.
pub const MAX_EVENT_LINE_BYTES: usize = 64 * 1024;

/// Largest message content carried by a dialogue event; longer content keeps
/// its head and tail.
pub const MAX_MESSAGE_BYTES: usize = 24 * 1024;

fn clamp_content(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let marker = "\n[... elided ...]\n";
    let keep = (max - marker.len()) / 2;
    let mut head = keep;
    while !text.is_char_boundary(head) {
        head -= 1;
    }
    let mut tail = text.len() - keep;
    while !text.is_char_boundary(tail) {
        tail += 1;
    }
    format!("{}{marker}{}", &text[..head], &text[tail..])
}

/// Splits a stage's dialogue into artifacts that each fit an event line.
pub fn dialogue_artifacts(messages: Vec<Message>, exchanges: Vec<Exchange>) -> Vec<Artifact> {
    const BUDGET: usize = MAX_EVENT_LINE_BYTES / 2;
    let mut out = Vec::new();
    let mut batch: Vec<Message> = Vec::new();
    let mut size = 0;
    let mut exchanges = Some(exchanges);
    for mut message in messages {
        message.content = clamp_content(&message.content, MAX_MESSAGE_BYTES);
        let len = message.content.len() + 256;
        if !batch.is_empty() && size + len > BUDGET {
            out.push(Artifact::Dialogue {
                messages: std::mem::take(&mut batch),
                exchanges: exchanges.take().unwrap_or_default(),
            });
            size = 0;
        }
        size += len;
        batch.push(message);
    }
    let leftover = exchanges.take().unwrap_or_default();
    if !batch.is_empty() || !leftover.is_empty() {
        out.push(Artifact::Dialogue { messages: batch, exchanges: leftover });
    }
    out
}
