//! Drives one session from intake to a finalized program.
//!
//! Every state change goes through an event: it is validated by the state
//! reducer, appended to the store (when attached) and handed to the sink.
//! The driver looks only at the current phase, so a reopened session picks
//! up where its log ends.

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::config::{ConfigError, FeedbackMode, SessionConfig};
use crate::events::{dialogue_artifacts, Artifact, EventKind, SessionEvent, StageName, MAX_EVENT_LINE_BYTES};
use crate::improve::{
    debug_until_executable, design_query, latest_metric, optimize_iteration, render_history, select_best,
    DebugError, IterationInput, LoopEvent, LoopSettings, VersionCounter,
};
use crate::llm::{ChatBackend, CompletionLimits, Llm, LlmError, OpenAiChat, OpenAiConfig, RetryPolicy, ScriptedBackend, ToolRegistry, TrafficMeter};
use crate::phase::{transition, Phase, PhaseEvent};
use crate::problem::{ProblemError, UserProblem};
use crate::program::Baseline;
use crate::retrieval::{
    determine_terminologies, format_context, ingest_documents, ingest_user_documents, retrieve_context,
    search_terminology, Embedder, HashEmbedder, HttpFetcher, HttpSearch, KnowledgeIndex, NoFetcher, NoSearch,
    OpenAiEmbedder, PageCache, PageFetcher, RetrievalError, SearchBackend, SearchContext, WebDocument,
};
use crate::state::{FeedbackRequest, SessionState};
use crate::store::{SessionStore, SessionWriter, StoreError};
use crate::synthesis::{
    generate_detailed_design, generate_module_code, generate_outline, integrate_modules, StageContext,
    SynthesisError,
};
use crate::program::Origin;

/// External services a session talks to.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub search: Arc<dyn SearchBackend>,
    pub fetcher: Arc<dyn PageFetcher>,
    pub embedder: Arc<dyn Embedder>,
    pub page_cache: Option<PageCache>,
    pub retry: RetryPolicy,
    /// Collects the wire exchanges of every backend above.
    pub meter: TrafficMeter,
}

impl Backends {
    /// Chat, search and page fetches all answered from one transcript; a
    /// hashing embedder keeps retrieval offline.
    pub fn scripted(backend: Arc<ScriptedBackend>) -> Self {
        Self {
            chat: backend.clone(),
            search: backend.clone(),
            fetcher: backend,
            embedder: Arc::new(HashEmbedder::default()),
            page_cache: None,
            retry: {
                let mut retry = RetryPolicy::default().with_sleeper(|_| {});
                retry.base = Duration::ZERO;
                retry
            },
            meter: TrafficMeter::default(),
        }
    }

    /// Live services configured from the environment. Search and
    /// embeddings fall back to "unavailable" and the hashing embedder.
    pub fn live_from_env(page_cache: Option<PageCache>) -> Result<Self, String> {
        let config = OpenAiConfig::from_env()?;
        let meter = TrafficMeter::default();
        let embedder: Arc<dyn Embedder> = match OpenAiEmbedder::from_env(config.api_key.clone(), meter.clone()) {
            Some(embedder) => Arc::new(embedder),
            None => Arc::new(HashEmbedder::default()),
        };
        let chat = OpenAiChat::new(config).map_err(|e| e.to_string())?;
        let (search, fetcher): (Arc<dyn SearchBackend>, Arc<dyn PageFetcher>) = match HttpSearch::from_env() {
            Some(search) => (Arc::new(search), Arc::new(HttpFetcher::default())),
            None => (Arc::new(NoSearch), Arc::new(NoFetcher)),
        };
        Ok(Self {
            chat: Arc::new(chat),
            search,
            fetcher,
            embedder,
            page_cache,
            retry: RetryPolicy::default(),
            meter,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateDecision {
    /// Go on without instructions.
    Continue,
    /// Go on with these instructions for the next prompt.
    Feedback(String),
    /// Stop iterating and finalize (or fail, when nothing is executable).
    Stop,
}

/// The rendezvous point where a human may steer the session.
pub trait FeedbackGate: Send + Sync {
    /// Blocks until a decision is available. `None` means nobody is
    /// listening; the session then stays paused in `AwaitingFeedback`.
    fn wait(&self, request: &FeedbackRequest) -> Option<GateDecision>;
}

/// Answers gates from a fixed queue, then reports no listener.
#[derive(Default)]
pub struct QueuedGate(Mutex<VecDeque<GateDecision>>);

impl QueuedGate {
    pub fn new(decisions: impl IntoIterator<Item = GateDecision>) -> Self {
        Self(Mutex::new(decisions.into_iter().collect()))
    }
}

impl FeedbackGate for QueuedGate {
    fn wait(&self, _request: &FeedbackRequest) -> Option<GateDecision> {
        self.0.lock().unwrap().pop_front()
    }
}

pub type EventSink = Arc<dyn Fn(&SessionEvent) + Send + Sync>;
pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Feedback texts above this size are refused.
pub const MAX_FEEDBACK_BYTES: usize = 8 * 1024;

/// Document bodies are clamped to this many bytes before indexing so that
/// their events fit a log line.
pub const MAX_DOCUMENT_BYTES: usize = 16 * 1024;

/// Each captured stream of a report is clamped to this many bytes in events;
/// the full output stays in the run directory.
pub const EVENT_STREAM_BYTES: usize = 8 * 1024;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("backend failure: {0}")]
    Backend(#[from] LlmError),
    #[error("synthesis failed: {0}")]
    Synthesis(SynthesisError),
    #[error("retrieval failed: {0}")]
    Retrieval(RetrievalError),
    #[error("session failed: {0}")]
    Failed(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<SynthesisError> for SessionError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Llm(e) => SessionError::Backend(e),
            other => SessionError::Synthesis(other),
        }
    }
}

impl From<RetrievalError> for SessionError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Llm(e) => SessionError::Backend(e),
            other => SessionError::Retrieval(other),
        }
    }
}

impl SessionError {
    pub fn is_backend(&self) -> bool {
        matches!(self, SessionError::Backend(_))
    }
}

/// Emits events: reducer, store, sink.
struct Recorder {
    state: SessionState,
    writer: Option<SessionWriter>,
    sink: Option<EventSink>,
    clock: Clock,
    extension: String,
    deferred: Option<SessionError>,
}

impl Recorder {
    fn emit(&mut self, kind: EventKind) -> Result<(), SessionError> {
        let event = SessionEvent {
            session_id: self.state.session_id.clone(),
            seq: self.state.last_seq + 1,
            timestamp: (self.clock)(),
            kind,
        };
        let bytes = serde_json::to_vec(&event).map_err(|e| SessionError::Internal(e.to_string()))?.len();
        if bytes > MAX_EVENT_LINE_BYTES {
            return Err(StoreError::EventTooLarge { seq: event.seq, bytes, limit: MAX_EVENT_LINE_BYTES }.into());
        }
        self.state.apply(&event).map_err(|e| SessionError::Internal(e.to_string()))?;
        if let Some(writer) = &mut self.writer {
            writer.append(&event)?;
            if let EventKind::StageArtifact { artifact: Artifact::Program { program }, .. } = &event.kind {
                writer.save_version(program, &self.extension)?;
            }
        }
        if let Some(sink) = &self.sink {
            sink(&event);
        }
        Ok(())
    }

    fn advance(&mut self, event: PhaseEvent) -> Result<(), SessionError> {
        let from = self.state.phase;
        let to = transition(from, &event)
            .ok_or_else(|| SessionError::Internal(format!("{event:?} is illegal in phase {from}")))?;
        self.emit(EventKind::PhaseChanged { from, to, event })
    }

    /// Records the dialogue and traffic since the last flush under `stage`.
    fn flush(&mut self, llm: &Llm, stage: StageName) -> Result<(), SessionError> {
        for artifact in dialogue_artifacts(llm.drain_messages(), llm.meter().drain()) {
            self.emit(EventKind::StageArtifact { stage, artifact })?;
        }
        Ok(())
    }

    fn observe(&mut self, event: LoopEvent, llm: &Llm) {
        if self.deferred.is_some() {
            return;
        }
        if let Err(e) = self.record_loop_event(event, llm) {
            self.deferred = Some(e);
        }
    }

    fn record_loop_event(&mut self, event: LoopEvent, llm: &Llm) -> Result<(), SessionError> {
        match event {
            LoopEvent::ExecutionStarted { version } => self.emit(EventKind::ExecutionStarted { version }),
            LoopEvent::ExecutionFinished { version, report, metric } => {
                if let (Some(writer), Some(program)) = (&self.writer, self.state.version(version)) {
                    writer.save_run(program, &self.extension, &report)?;
                }
                self.emit(EventKind::ExecutionFinished { version, report: report.clamped(EVENT_STREAM_BYTES), metric })
            }
            LoopEvent::Artifact { stage, artifact } => self.emit(EventKind::StageArtifact { stage, artifact }),
            LoopEvent::DebugRound { round, from_version, to_version, feedback } => {
                self.emit(EventKind::DebugRound { round, from_version, to_version, feedback })
            }
            LoopEvent::StageDone(stage) => self.flush(llm, stage),
            LoopEvent::Warning(message) => self.emit(EventKind::Warning { message }),
        }
    }

    fn take_deferred(&mut self) -> Result<(), SessionError> {
        match self.deferred.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Everything the stages call out to.
struct Runtime {
    llm: Llm,
    tools: ToolRegistry,
    backends: Backends,
    index: Arc<RwLock<KnowledgeIndex>>,
    gate: Option<Arc<dyn FeedbackGate>>,
}

impl Runtime {
    fn context(&self, query: &str, k: usize) -> String {
        let index = self.index.read().unwrap();
        match retrieve_context(query, k, &index, self.backends.embedder.as_ref()) {
            Ok(hits) => format_context(&hits),
            Err(e) => {
                tracing::warn!(%e, "knowledge retrieval failed");
                format_context(&[])
            }
        }
    }
}

fn clamp_document(mut document: WebDocument) -> WebDocument {
    if document.body_text.len() > MAX_DOCUMENT_BYTES {
        let mut end = MAX_DOCUMENT_BYTES;
        while !document.body_text.is_char_boundary(end) {
            end -= 1;
        }
        document.body_text.truncate(end);
    }
    document
}

fn build_tools(backends: &Backends, index: &Arc<RwLock<KnowledgeIndex>>, k: usize) -> ToolRegistry {
    let mut tools = ToolRegistry::new();
    let search = backends.search.clone();
    let meter = backends.meter.clone();
    tools
        .register(
            "web_search",
            "Searches the web. The argument is the query text; the result lists titles, URLs and snippets.",
            move |query| {
                let response = search.search(query.trim()).map_err(|e| e.to_string())?;
                if let Some(exchange) = response.exchange {
                    meter.push(exchange);
                }
                if response.hits.is_empty() {
                    return Ok("(no results)".into());
                }
                Ok(response
                    .hits
                    .iter()
                    .enumerate()
                    .map(|(i, h)| format!("{}. {} ({})\n{}", i + 1, h.title, h.url, h.snippet))
                    .collect::<Vec<_>>()
                    .join("\n"))
            },
        )
        .expect("fresh registry");
    let index = index.clone();
    let embedder = backends.embedder.clone();
    tools
        .register(
            "knowledge_search",
            "Searches the documents collected for this session. The argument is the query text.",
            move |query| {
                let index = index.read().unwrap();
                let hits = retrieve_context(query.trim(), k, &index, embedder.as_ref()).map_err(|e| e.to_string())?;
                Ok(format_context(&hits))
            },
        )
        .expect("fresh registry");
    tools
}

fn utc_now() -> Clock {
    Arc::new(Utc::now)
}

/// A short random session id.
pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()[..12].to_string()
}

pub struct Session {
    rec: Recorder,
    rt: Runtime,
    problem: UserProblem,
    config: SessionConfig,
}

impl Session {
    /// A new in-memory session. Nothing is emitted until [`Session::run`].
    pub fn new(id: impl Into<String>, problem: UserProblem, config: SessionConfig, backends: Backends) -> Result<Self, SessionError> {
        config.validate()?;
        problem.validate()?;
        problem.check_dataset()?;
        Ok(Self::assemble(SessionState::new(id), None, problem, config, backends))
    }

    fn assemble(
        state: SessionState,
        writer: Option<SessionWriter>,
        problem: UserProblem,
        config: SessionConfig,
        backends: Backends,
    ) -> Self {
        let index = Arc::new(RwLock::new(KnowledgeIndex::new()));
        let tools = build_tools(&backends, &index, config.retrieval_k);
        let llm = Llm::new(backends.chat.clone())
            .with_limits(CompletionLimits { max_tool_rounds: config.max_tool_rounds })
            .with_retry(backends.retry.clone())
            .with_meter(backends.meter.clone());
        Self {
            rec: Recorder {
                state,
                writer,
                sink: None,
                clock: utc_now(),
                extension: config.limits.script_extension.clone(),
                deferred: None,
            },
            rt: Runtime { llm, tools, backends, index, gate: None },
            problem,
            config,
        }
    }

    /// Persists the session under `store`. `problem_text` is the problem
    /// file as the user wrote it.
    pub fn attach_store(&mut self, store: &SessionStore, problem_text: &str) -> Result<(), SessionError> {
        if self.rec.state.last_seq > 0 {
            return Err(SessionError::Internal("a store must be attached before the session starts".into()));
        }
        self.rec.writer = Some(store.create(&self.rec.state.session_id, problem_text)?);
        Ok(())
    }

    /// Reopens a stored session. Its knowledge index is rebuilt from the
    /// indexed documents.
    pub fn open(store: &SessionStore, id: &str, backends: Backends) -> Result<Self, SessionError> {
        let (state, writer) = store.open(id)?;
        let (problem, config) = match (&state.problem, &state.config) {
            (Some(p), Some(c)) => (p.clone(), c.clone()),
            _ => return Err(StoreError::CorruptArchive { seq: 1, reason: "no session_created event".into() }.into()),
        };
        let documents = state.documents.clone();
        let session = Self::assemble(state, Some(writer), problem, config, backends);
        {
            let mut index = session.rt.index.write().unwrap();
            ingest_documents(&documents, &mut index, session.rt.backends.embedder.as_ref(), session.config.chunking)?;
        }
        Ok(session)
    }

    /// Starts a fresh session with the problem and config of a stored one.
    pub fn fork(store: &SessionStore, id: &str, new_id: &str, backends: Backends) -> Result<Self, SessionError> {
        let state = store.load(id)?;
        let (Some(problem), Some(config)) = (state.problem, state.config) else {
            return Err(StoreError::CorruptArchive { seq: 1, reason: "no session_created event".into() }.into());
        };
        let problem_path = store.session_dir(id).join("problem.toml");
        let problem_text = std::fs::read_to_string(&problem_path).unwrap_or_else(|_| problem.to_toml());
        let mut session = Self::new(new_id, problem, config, backends)?;
        session.attach_store(store, &problem_text)?;
        Ok(session)
    }

    pub fn with_sink(mut self, sink: EventSink) -> Self {
        self.rec.sink = Some(sink);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.rec.clock = clock;
        self
    }

    pub fn with_gate(mut self, gate: Arc<dyn FeedbackGate>) -> Self {
        self.rt.gate = Some(gate);
        self
    }

    pub fn id(&self) -> &str {
        &self.rec.state.session_id
    }

    pub fn state(&self) -> &SessionState {
        &self.rec.state
    }

    pub fn into_state(self) -> SessionState {
        self.rec.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Runs until the session is finalized, failed, or paused at a feedback
    /// gate nobody answers. Failures are recorded before they are returned.
    pub fn run(&mut self) -> Result<Phase, SessionError> {
        match self.drive() {
            Ok(()) => Ok(self.rec.state.phase),
            Err(error) => {
                if !matches!(error, SessionError::Store(_)) && !self.rec.state.phase.is_terminal() && self.rec.state.last_seq > 0 {
                    self.rec.deferred = None;
                    let _ = self.rec.flush(&self.rt.llm, StageName::Debug);
                    let message = error.to_string();
                    let _ = self.rec.emit(EventKind::Error { message: message.clone() });
                    let _ = self.rec.advance(PhaseEvent::Fail { reason: first_line(&message).to_string() });
                }
                Err(error)
            }
        }
    }

    fn drive(&mut self) -> Result<(), SessionError> {
        if self.rec.state.last_seq == 0 {
            self.rec.emit(EventKind::SessionCreated { problem: self.problem.clone(), config: self.config.clone() })?;
        }
        loop {
            match self.rec.state.phase {
                Phase::Intake => self.rec.advance(PhaseEvent::RetrievalStarted)?,
                Phase::Retrieval => {
                    self.retrieval()?;
                    self.rec.advance(PhaseEvent::RetrievalComplete)?;
                }
                Phase::Outline => {
                    self.outline()?;
                    self.rec.advance(PhaseEvent::OutlineReady)?;
                }
                Phase::DetailedDesign => {
                    self.design()?;
                    self.rec.advance(PhaseEvent::DesignReady)?;
                }
                Phase::ModuleCodegen => {
                    self.modules()?;
                    self.rec.advance(PhaseEvent::ModulesReady)?;
                }
                Phase::Integration => {
                    self.integrate()?;
                    self.rec.advance(PhaseEvent::Integrated)?;
                }
                Phase::Debugging => self.debugging()?,
                Phase::Optimizing => self.iteration()?,
                Phase::AwaitingFeedback => {
                    if !self.feedback_gate()? {
                        return Ok(());
                    }
                }
                Phase::Finalized | Phase::Failed => return Ok(()),
            }
        }
    }

    fn ctx(&self) -> StageContext<'_> {
        StageContext { problem: &self.problem, llm: &self.rt.llm, tools: &self.rt.tools }
    }

    fn retrieval(&mut self) -> Result<(), SessionError> {
        let mut indexed: BTreeSet<String> = self.rec.state.documents.iter().map(|d| d.url.clone()).collect();
        if !self.config.user_documents.is_empty() && indexed.is_empty() {
            let mut scratch = KnowledgeIndex::new();
            let documents =
                ingest_user_documents(&self.config.user_documents, &mut scratch, self.rt.backends.embedder.as_ref(), self.config.chunking)?;
            for document in documents {
                self.index_document(clamp_document(document), &mut indexed)?;
            }
        }

        let terms = if self.rec.state.terminologies.is_empty() {
            let found = determine_terminologies(&self.problem, &self.rt.llm);
            self.rec.flush(&self.rt.llm, StageName::Terminology)?;
            match found {
                Ok(terms) => {
                    self.rec.emit(EventKind::TerminologyFound { terms: terms.clone() })?;
                    terms
                }
                Err(RetrievalError::Llm(e)) => return Err(e.into()),
                Err(e) => {
                    self.rec.emit(EventKind::Warning { message: format!("continuing without web knowledge: {e}") })?;
                    Vec::new()
                }
            }
        } else {
            self.rec.state.terminologies.clone()
        };

        for term in &terms {
            let ctx = SearchContext {
                search: self.rt.backends.search.as_ref(),
                fetcher: self.rt.backends.fetcher.as_ref(),
                cache: self.rt.backends.page_cache.as_ref(),
                max_results: self.config.max_search_results,
            };
            let found = search_terminology(term, &self.problem, &ctx, &self.rt.llm);
            self.rec.flush(&self.rt.llm, StageName::Relevance)?;
            let found = found?;
            for message in found.warnings {
                self.rec.emit(EventKind::Warning { message })?;
            }
            for document in found.documents {
                self.index_document(clamp_document(document), &mut indexed)?;
            }
        }
        Ok(())
    }

    fn index_document(&mut self, mut document: WebDocument, indexed: &mut BTreeSet<String>) -> Result<(), SessionError> {
        if !indexed.insert(document.url.clone()) {
            return Ok(());
        }
        document.fetched_at = (self.rec.clock)();
        let counts = {
            let mut index = self.rt.index.write().unwrap();
            ingest_documents(std::slice::from_ref(&document), &mut index, self.rt.backends.embedder.as_ref(), self.config.chunking)?
        };
        let chunks = counts.first().copied().unwrap_or(0);
        self.rec.emit(EventKind::DocIndexed { document, chunks })
    }

    fn outline(&mut self) -> Result<(), SessionError> {
        if self.rec.state.outline.is_some() {
            return Ok(());
        }
        let query = format!("algorithm outline {} {}", self.problem.target, self.problem.remarks);
        let context = self.rt.context(&query, self.config.retrieval_k);
        let outline = generate_outline(&self.ctx(), &context);
        self.rec.flush(&self.rt.llm, StageName::Outline)?;
        let outline = outline?;
        self.rec.emit(EventKind::StageArtifact { stage: StageName::Outline, artifact: Artifact::Outline { outline } })
    }

    fn design(&mut self) -> Result<(), SessionError> {
        if self.rec.state.design.is_some() {
            return Ok(());
        }
        let outline = self.rec.state.outline.clone().ok_or_else(|| SessionError::Internal("no outline".into()))?;
        let context = self.rt.context(&design_query(&outline), self.config.retrieval_k);
        let design = generate_detailed_design(&self.ctx(), &outline, &context);
        self.rec.flush(&self.rt.llm, StageName::DetailedDesign)?;
        let design = design?;
        self.rec.emit(EventKind::StageArtifact { stage: StageName::DetailedDesign, artifact: Artifact::Design { design } })
    }

    fn modules(&mut self) -> Result<(), SessionError> {
        let design = self.rec.state.design.clone().ok_or_else(|| SessionError::Internal("no design".into()))?;
        for subtask in &design.subtasks {
            if self.rec.state.modules.iter().any(|m| m.function_name == subtask.function_name) {
                continue;
            }
            let module = generate_module_code(&self.ctx(), subtask, &design);
            self.rec.flush(&self.rt.llm, StageName::ModuleCodegen)?;
            let module = module?;
            self.rec.emit(EventKind::StageArtifact { stage: StageName::ModuleCodegen, artifact: Artifact::Module { module } })?;
        }
        Ok(())
    }

    fn integrate(&mut self) -> Result<(), SessionError> {
        let design = self.rec.state.design.clone().ok_or_else(|| SessionError::Internal("no design".into()))?;
        let modules: Vec<_> = design
            .subtasks
            .iter()
            .filter_map(|s| self.rec.state.modules.iter().find(|m| m.function_name == s.function_name).cloned())
            .collect();
        let version = self.rec.state.versions.len() as u32 + 1;
        let program = integrate_modules(&self.ctx(), &modules, version, Origin::Integration, None);
        self.rec.flush(&self.rt.llm, StageName::Integration)?;
        let program = program?;
        self.rec.emit(EventKind::StageArtifact { stage: StageName::Integration, artifact: Artifact::Program { program } })
    }

    fn debugging(&mut self) -> Result<(), SessionError> {
        let program = self.rec.state.latest_version().cloned().ok_or_else(|| SessionError::Internal("no program".into()))?;
        let feedback = self.rec.state.pending_feedback.clone();
        let mut versions = VersionCounter(self.rec.state.versions.len() as u32);
        let Self { rec, rt, problem, config } = self;
        let ctx = StageContext { problem, llm: &rt.llm, tools: &rt.tools };
        let settings = LoopSettings { limits: &config.limits, debug: config.debug, stderr_tail_bytes: config.stderr_tail_bytes };
        let outcome =
            debug_until_executable(&ctx, program, &settings, &mut versions, feedback.as_deref(), &mut |e| rec.observe(e, &rt.llm));
        rec.take_deferred()?;
        match outcome {
            Ok(done) => {
                if rec.state.baseline.is_none() {
                    if done.metric.is_none() {
                        rec.emit(EventKind::Warning {
                            message: format!("version {} ran but reported no FINAL_METRIC line", done.program.version),
                        })?;
                    }
                    let baseline = Baseline { version: done.program.version, metric: done.metric };
                    rec.emit(EventKind::StageArtifact { stage: StageName::Debug, artifact: Artifact::Baseline { baseline } })?;
                }
                rec.advance(PhaseEvent::Executable)
            }
            Err(DebugError::Exhausted(e)) => {
                rec.emit(EventKind::Warning { message: e.to_string() })?;
                rec.advance(PhaseEvent::DebugExhausted)
            }
            Err(DebugError::Llm(e)) => Err(e.into()),
            Err(DebugError::Render(e)) => Err(SessionError::Internal(e.to_string())),
        }
    }

    fn iteration(&mut self) -> Result<(), SessionError> {
        let index = self.rec.state.iterations.len() as u32;
        let feedback = self.rec.state.pending_feedback.clone();
        let outline = self.rec.state.outline.clone().ok_or_else(|| SessionError::Internal("no outline".into()))?;
        let history = render_history(self.rec.state.baseline.as_ref(), &self.rec.state.iterations);
        let latest = latest_metric(self.rec.state.baseline.as_ref(), &self.rec.state.iterations);
        let mut versions = VersionCounter(self.rec.state.versions.len() as u32);
        let input = IterationInput { index, outline: &outline, history, latest, feedback: feedback.as_deref() };

        let Self { rec, rt, problem, config } = self;
        let ctx = StageContext { problem, llm: &rt.llm, tools: &rt.tools };
        let settings = LoopSettings { limits: &config.limits, debug: config.debug, stderr_tail_bytes: config.stderr_tail_bytes };
        let k = config.retrieval_k;
        let context = |query: &str| rt.context(query, k);
        let record = optimize_iteration(&ctx, &input, &settings, &mut versions, &context, &mut |e| rec.observe(e, &rt.llm));
        rec.take_deferred()?;
        let mut record = record?;
        record.report = record.report.map(|r| r.clamped(EVENT_STREAM_BYTES));
        rec.emit(EventKind::IterationDone { record })?;
        rec.advance(PhaseEvent::IterationDone { index, total: config.optimize.iterations })
    }

    /// Handles the `AwaitingFeedback` phase. Returns false when the session
    /// pauses because nobody answers the gate.
    fn feedback_gate(&mut self) -> Result<bool, SessionError> {
        let exhausted = matches!(self.rec.state.audit.last().map(|a| &a.event), Some(PhaseEvent::DebugExhausted));
        let interactive = self.config.optimize.feedback_gate == FeedbackMode::Interactive;
        let done = self.rec.state.iterations.len() as u32 >= self.config.optimize.iterations;

        if !interactive {
            if exhausted {
                self.rec.advance(PhaseEvent::Fail { reason: "the program could not be made executable".into() })?;
            } else if done {
                self.finalize()?;
            } else {
                self.rec.advance(PhaseEvent::Continue)?;
            }
            return Ok(true);
        }

        let after_iteration = if exhausted { None } else { self.rec.state.iterations.len().checked_sub(1).map(|i| i as u32) };
        let reason = if exhausted {
            "debugging exhausted; instructions will be passed to the next debug round".to_string()
        } else if done {
            "all iterations done; feedback runs one more iteration, continue finalizes".to_string()
        } else {
            format!("iteration {} of {} done", self.rec.state.iterations.len(), self.config.optimize.iterations)
        };
        if self.rec.state.feedback_request.is_none() {
            self.rec.emit(EventKind::FeedbackRequested { after_iteration, reason })?;
        }
        let request = self.rec.state.feedback_request.clone().expect("just requested");
        let Some(decision) = self.rt.gate.as_ref().and_then(|g| g.wait(&request)) else {
            return Ok(false);
        };
        match decision {
            GateDecision::Feedback(text) => {
                if text.len() > MAX_FEEDBACK_BYTES {
                    return Err(SessionError::Failed(format!("feedback of {} bytes exceeds {MAX_FEEDBACK_BYTES}", text.len())));
                }
                self.rec.emit(EventKind::FeedbackReceived { text: Some(text) })?;
                self.rec.advance(if exhausted { PhaseEvent::RetryDebug } else { PhaseEvent::Continue })?;
            }
            GateDecision::Continue => {
                self.rec.emit(EventKind::FeedbackReceived { text: None })?;
                if exhausted {
                    self.rec.advance(PhaseEvent::RetryDebug)?;
                } else if done {
                    self.finalize()?;
                } else {
                    self.rec.advance(PhaseEvent::Continue)?;
                }
            }
            GateDecision::Stop => {
                self.rec.emit(EventKind::FeedbackReceived { text: None })?;
                if exhausted {
                    self.rec.advance(PhaseEvent::Fail { reason: "stopped at the feedback gate".into() })?;
                } else {
                    self.finalize()?;
                }
            }
        }
        Ok(true)
    }

    fn finalize(&mut self) -> Result<(), SessionError> {
        let Some(baseline) = self.rec.state.baseline.clone() else {
            return Err(SessionError::Failed("no executable program to finalize".into()));
        };
        let version = select_best(&self.rec.state.iterations, &baseline);
        self.rec.emit(EventKind::Finalized { version })?;
        self.rec.advance(PhaseEvent::Finalize)
    }
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}
