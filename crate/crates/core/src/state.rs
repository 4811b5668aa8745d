//! Session state as a fold over the event log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SessionConfig;
use crate::events::{Artifact, EventKind, SessionEvent, StageName};
use crate::llm::Message;
use crate::phase::{advance_phase, transition, AuditEntry, Phase};
use crate::problem::UserProblem;
use crate::program::{Baseline, IterationRecord, RunRecord, SynthesizedProgram};
use crate::retrieval::{Terminology, WebDocument};
use crate::synthesis::{AlgorithmOutline, CodeModule, DetailedDesign, GateReport};
use crate::traffic::{record_traffic, TrafficTotals};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebugRoundRecord {
    pub round: u32,
    pub from_version: u32,
    pub to_version: Option<u32>,
    pub feedback: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub after_iteration: Option<u32>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub problem: Option<UserProblem>,
    pub config: Option<SessionConfig>,
    pub phase: Phase,
    pub audit: Vec<AuditEntry>,
    pub conversation: Vec<Message>,
    pub terminologies: Vec<Terminology>,
    pub documents: Vec<WebDocument>,
    pub outline: Option<AlgorithmOutline>,
    pub design: Option<DetailedDesign>,
    /// Modules of the current synthesis cycle.
    pub modules: Vec<CodeModule>,
    pub versions: Vec<SynthesizedProgram>,
    pub gate_reports: Vec<(Option<u32>, GateReport)>,
    pub runs: Vec<RunRecord>,
    pub debug_rounds: Vec<DebugRoundRecord>,
    pub baseline: Option<Baseline>,
    pub iterations: Vec<IterationRecord>,
    pub feedback_request: Option<FeedbackRequest>,
    /// Feedback received but not yet consumed by an iteration or debug round.
    pub pending_feedback: Option<String>,
    pub final_version: Option<u32>,
    pub traffic: TrafficTotals,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub last_seq: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event seq {got} where {expected} was expected")]
    Sequence { expected: u64, got: u64 },
    #[error("event seq {seq} belongs to session {got}, not {expected}")]
    ForeignEvent { seq: u64, expected: String, got: String },
    #[error("event seq {seq} is inconsistent with the session: {reason}")]
    Inconsistent { seq: u64, reason: String },
}

impl ReplayError {
    pub fn seq(&self) -> u64 {
        match self {
            ReplayError::Sequence { got, .. } => *got,
            ReplayError::ForeignEvent { seq, .. } | ReplayError::Inconsistent { seq, .. } => *seq,
        }
    }
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            problem: None,
            config: None,
            phase: Phase::Intake,
            audit: Vec::new(),
            conversation: Vec::new(),
            terminologies: Vec::new(),
            documents: Vec::new(),
            outline: None,
            design: None,
            modules: Vec::new(),
            versions: Vec::new(),
            gate_reports: Vec::new(),
            runs: Vec::new(),
            debug_rounds: Vec::new(),
            baseline: None,
            iterations: Vec::new(),
            feedback_request: None,
            pending_feedback: None,
            final_version: None,
            traffic: TrafficTotals::default(),
            warnings: Vec::new(),
            errors: Vec::new(),
            started_at: None,
            finished_at: None,
            last_seq: 0,
        }
    }

    /// Rebuilds a state from a complete event list.
    pub fn replay<'a>(session_id: &str, events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<Self, ReplayError> {
        let mut state = Self::new(session_id);
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn version(&self, n: u32) -> Option<&SynthesizedProgram> {
        n.checked_sub(1).and_then(|i| self.versions.get(i as usize))
    }

    pub fn latest_version(&self) -> Option<&SynthesizedProgram> {
        self.versions.last()
    }

    /// Runs of version `n`, oldest first.
    pub fn runs_of(&self, n: u32) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.version == n)
    }

    /// Whether the first execution of version 1 succeeded.
    pub fn first_run_succeeded(&self) -> bool {
        self.runs_of(1).next().is_some_and(|r| r.report.succeeded())
    }

    /// How many chat replies and search answers this session has consumed.
    /// Replies are the assistant messages; searches are counted as traffic.
    pub fn scripted_position(&self) -> (usize, usize) {
        let chat = self.conversation.iter().filter(|m| m.role == crate::llm::Role::Assistant).count();
        let search = self.traffic.per_backend.get("scripted-search").map_or(0, |b| b.requests as usize);
        (chat, search)
    }

    pub fn final_program(&self) -> Option<&SynthesizedProgram> {
        self.final_version.and_then(|v| self.version(v))
    }

    /// Applies one event. On error the state is left as it was.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), ReplayError> {
        let expected = self.last_seq + 1;
        if event.seq != expected {
            return Err(ReplayError::Sequence { expected, got: event.seq });
        }
        if event.session_id != self.session_id {
            return Err(ReplayError::ForeignEvent {
                seq: event.seq,
                expected: self.session_id.clone(),
                got: event.session_id.clone(),
            });
        }
        self.apply_kind(event).map_err(|reason| ReplayError::Inconsistent { seq: event.seq, reason })?;
        self.last_seq = event.seq;
        Ok(())
    }

    /// Every arm validates before it mutates.
    fn apply_kind(&mut self, event: &SessionEvent) -> Result<(), String> {
        let at = event.timestamp;
        if self.problem.is_none() && !matches!(event.kind, EventKind::SessionCreated { .. }) {
            return Err("the log must start with session_created".into());
        }
        match &event.kind {
            EventKind::SessionCreated { problem, config } => {
                if self.problem.is_some() {
                    return Err("session created twice".into());
                }
                self.problem = Some(problem.clone());
                self.config = Some(config.clone());
                self.started_at = Some(at);
            }
            EventKind::PhaseChanged { from, to, event: phase_event } => {
                if *from != self.phase {
                    return Err(format!("phase change from {from} while in {}", self.phase));
                }
                match transition(self.phase, phase_event) {
                    Some(reached) if reached == *to => {}
                    Some(reached) => return Err(format!("{phase_event:?} leads to {reached}, not {to}")),
                    None => return Err(format!("{phase_event:?} is illegal in {}", self.phase)),
                }
                advance_phase(self, phase_event.clone(), at).map_err(|e| e.to_string())?;
            }
            EventKind::TerminologyFound { terms } => {
                if terms.iter().any(|t| t.term.trim().is_empty()) {
                    return Err("empty terminology".into());
                }
                for term in terms {
                    let key = term.term.to_lowercase();
                    if !self.terminologies.iter().any(|t| t.term.to_lowercase() == key) {
                        self.terminologies.push(term.clone());
                    }
                }
            }
            EventKind::DocIndexed { document, .. } => self.documents.push(document.clone()),
            EventKind::StageArtifact { stage, artifact } => self.apply_artifact(*stage, artifact)?,
            EventKind::ExecutionStarted { version } => {
                self.require_version(*version)?;
            }
            EventKind::ExecutionFinished { version, report, metric } => {
                self.require_version(*version)?;
                if metric.is_some() && !report.succeeded() {
                    return Err("metric on a failed run".into());
                }
                self.runs.push(RunRecord { version: *version, report: report.clone(), metric: metric.clone() });
            }
            EventKind::DebugRound { round, from_version, to_version, feedback } => {
                self.require_version(*from_version)?;
                if let Some(to) = to_version {
                    self.require_version(*to)?;
                }
                if feedback.is_some() {
                    self.pending_feedback = None;
                }
                self.debug_rounds.push(DebugRoundRecord {
                    round: *round,
                    from_version: *from_version,
                    to_version: *to_version,
                    feedback: feedback.clone(),
                });
            }
            EventKind::IterationDone { record } => {
                if record.index as usize != self.iterations.len() {
                    return Err(format!("iteration {} recorded after {}", record.index, self.iterations.len()));
                }
                if let Some(version) = record.version {
                    self.require_version(version)?;
                }
                if record.metric.is_some() && !record.report.as_ref().is_some_and(|r| r.succeeded()) {
                    return Err("iteration metric without a successful run".into());
                }
                if record.user_feedback.is_some() {
                    self.pending_feedback = None;
                }
                self.iterations.push(record.clone());
            }
            EventKind::FeedbackRequested { after_iteration, reason } => {
                self.feedback_request = Some(FeedbackRequest { after_iteration: *after_iteration, reason: reason.clone() });
            }
            EventKind::FeedbackReceived { text } => {
                self.feedback_request = None;
                self.pending_feedback = text.clone();
            }
            EventKind::Finalized { version } => {
                self.require_version(*version)?;
                self.final_version = Some(*version);
            }
            EventKind::Warning { message } => self.warnings.push(message.clone()),
            EventKind::Error { message } => self.errors.push(message.clone()),
        }
        Ok(())
    }

    fn require_version(&self, version: u32) -> Result<(), String> {
        if self.version(version).is_none() {
            return Err(format!("version {version} does not exist"));
        }
        Ok(())
    }

    fn apply_artifact(&mut self, stage: StageName, artifact: &Artifact) -> Result<(), String> {
        match artifact {
            Artifact::Dialogue { messages, exchanges } => {
                self.conversation.extend(messages.iter().cloned());
                self.traffic = record_traffic(std::mem::take(&mut self.traffic), exchanges);
            }
            Artifact::Outline { outline } => {
                if outline.steps.len() < 2 {
                    return Err("outline with fewer than 2 steps".into());
                }
                self.outline = Some(outline.clone());
            }
            Artifact::Design { design } => {
                self.design = Some(design.clone());
                self.modules.clear();
            }
            Artifact::Module { module } => self.modules.push(module.clone()),
            Artifact::Program { program } => {
                let expected = self.versions.len() as u32 + 1;
                if program.version != expected {
                    return Err(format!("program version {} where {expected} was expected", program.version));
                }
                if let Some(parent) = program.parent_version {
                    if parent >= program.version || self.version(parent).is_none() {
                        return Err(format!("version {} has invalid parent {parent}", program.version));
                    }
                }
                self.versions.push(program.clone());
            }
            Artifact::Gate { version, report } => self.gate_reports.push((*version, report.clone())),
            Artifact::Baseline { baseline } => {
                self.require_version(baseline.version)?;
                self.baseline = Some(baseline.clone());
            }
        }
        let _ = stage;
        Ok(())
    }
}
