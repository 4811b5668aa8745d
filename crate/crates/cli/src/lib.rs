//! The `synthkit` command line.
//!
//! Exit codes: 0 success, 1 other errors, 2 usage, 3 session failure,
//! 4 backend failure, 5 unknown session, 6 wrong phase.

mod gate;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use synthkit_core::config::Overrides;
use synthkit_core::improve::compute_esr_air;
use synthkit_core::llm::ScriptedBackend;
use synthkit_core::program::RunRecord;
use synthkit_core::retrieval::PageCache;
use synthkit_core::session::{new_session_id, FeedbackGate, MAX_FEEDBACK_BYTES};
use synthkit_core::store::RunSummary;
use synthkit_core::{
    Backends, GateDecision, IterationRecord, Origin, Phase, Session, SessionConfig, SessionError, SessionState,
    SessionStore, StoreError, UserProblem,
};
use synthkit_server::{BackendMode, ServerConfig, TRANSCRIPT_FILE};

pub use gate::{AutoContinue, ConsoleGate};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SESSION_FAILED: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_NOT_FOUND: i32 = 5;
pub const EXIT_WRONG_PHASE: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "synthkit", version, about = "Synthesize, debug and optimize sensor-data programs")]
pub struct Cli {
    /// Where session archives live.
    #[arg(long, global = true, env = "SYNTHKIT_SESSIONS_DIR", default_value = "sessions")]
    pub sessions_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Real chat, search and embedding services configured from the environment.
    Live,
    /// Replies replayed from a transcript file.
    Transcript,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Defaults to `transcript` when `--transcript` is given, else `live`.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Directory caching fetched pages in live mode.
    #[arg(long)]
    pub page_cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a new session end to end.
    New {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long)]
        debug_rounds: Option<u32>,
        /// Wall-clock limit per program execution, in seconds.
        #[arg(long)]
        timeout: Option<f64>,
        /// A local document to add to the knowledge index (repeatable).
        #[arg(long = "doc")]
        docs: Vec<PathBuf>,
        /// Ask on the console at every feedback gate instead of continuing.
        #[arg(long)]
        pause_for_feedback: bool,
    },
    /// Continue a paused or interrupted session; a failed one starts over.
    Resume {
        id: String,
        #[arg(long)]
        page_cache: Option<PathBuf>,
        #[arg(long)]
        pause_for_feedback: bool,
    },
    /// Phase, versions, metrics and traffic of a session.
    Show {
        id: String,
        #[arg(long)]
        json: bool,
    },
    /// Write the deliverable bundle of a finalized session.
    Export { id: String },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        backend: BackendArgs,
        /// Relative dataset paths in uploaded problems resolve against this.
        #[arg(long, default_value = ".")]
        base_dir: PathBuf,
    },
    /// ESR and AIR over a directory of session archives.
    Eval {
        dir: PathBuf,
        /// Number of sessions expected; the first N by id are used.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long)]
        json: bool,
    },
    /// Answer a session's feedback gate and let it run to the next one.
    Feedback {
        id: String,
        text: String,
        /// Post to a running server instead of driving the session here.
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        page_cache: Option<PathBuf>,
    },
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::NotFound(_) | StoreError::InvalidId(_) => EXIT_NOT_FOUND,
            StoreError::NothingToExport { .. } => EXIT_WRONG_PHASE,
            _ => EXIT_OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Store(e) => e.into(),
            SessionError::Config(_) | SessionError::Problem(_) => Failure::new(EXIT_USAGE, e.to_string()),
            e if e.is_backend() => Failure::new(EXIT_BACKEND, e.to_string()),
            e => Failure::new(EXIT_SESSION_FAILED, e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` and runs the command; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("synthkit: {}", failure.message);
            failure.code
        }
    }
}

pub fn run(cli: Cli) -> Outcome {
    let store = SessionStore::new(&cli.sessions_dir);
    match cli.command {
        Command::New { problem, backend, iterations, debug_rounds, timeout, docs, pause_for_feedback } => {
            let overrides = Overrides {
                iterations,
                debug_rounds,
                timeout_secs: timeout,
                interactive: pause_for_feedback.then_some(true),
                documents: docs.iter().map(|d| absolute(d)).collect::<Result<_, _>>()?,
            };
            new_session(&store, &problem, &backend, &overrides)
        }
        Command::Resume { id, page_cache, pause_for_feedback } => resume(&store, &id, page_cache, pause_for_feedback),
        Command::Show { id, json } => show(&store, &id, json),
        Command::Export { id } => {
            let path = store.export(&id)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Serve { addr, backend, base_dir } => serve(&cli.sessions_dir, addr, &backend, base_dir),
        Command::Eval { dir, runs, threshold, json } => eval(&dir, runs, threshold, json),
        Command::Feedback { id, text, server: Some(url), .. } => post_feedback(&url, &id, &text),
        Command::Feedback { id, text, server: None, page_cache } => feedback(&store, &id, text, page_cache),
    }
}

fn absolute(path: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(path).map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn mode_of(args: &BackendArgs) -> Result<Mode, Failure> {
    let mode = args.mode.unwrap_or(if args.transcript.is_some() { Mode::Transcript } else { Mode::Live });
    if mode == Mode::Transcript && args.transcript.is_none() {
        return Err(Failure::new(EXIT_USAGE, "transcript mode needs --transcript"));
    }
    Ok(mode)
}

fn read_transcript(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read transcript {}: {e}", path.display())))
}

fn scripted(text: &str, position: (usize, usize)) -> Result<Backends, Failure> {
    let backend = ScriptedBackend::from_text(text).map_err(|e| Failure::new(EXIT_USAGE, format!("bad transcript: {e}")))?;
    backend.resume_at(position.0, position.1);
    Ok(Backends::scripted(Arc::new(backend)))
}

fn live(page_cache: Option<&Path>) -> Result<Backends, Failure> {
    Backends::live_from_env(page_cache.map(PageCache::new)).map_err(|e| Failure::new(EXIT_BACKEND, e))
}

/// Backends for continuing a stored session: its transcript copy picks up
/// where the recorded conversation stopped, otherwise live services.
fn reopened_backends(store: &SessionStore, state: &SessionState, page_cache: Option<&Path>) -> Result<Backends, Failure> {
    match std::fs::read_to_string(store.session_dir(&state.session_id).join(TRANSCRIPT_FILE)) {
        Ok(text) => scripted(&text, state.scripted_position()),
        Err(_) => live(page_cache),
    }
}

fn gate_for(pause_for_feedback: bool) -> Arc<dyn FeedbackGate> {
    if pause_for_feedback {
        Arc::new(ConsoleGate::stdin())
    } else {
        Arc::new(AutoContinue)
    }
}

fn new_session(store: &SessionStore, problem_path: &Path, backend: &BackendArgs, overrides: &Overrides) -> Outcome {
    let problem_path = absolute(problem_path)?;
    let (problem, text) = UserProblem::load(&problem_path).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let config = overrides.apply(SessionConfig::default()).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let interactive = overrides.interactive == Some(true);
    let (backends, transcript) = match mode_of(backend)? {
        Mode::Transcript => {
            let text = read_transcript(backend.transcript.as_deref().expect("checked by mode_of"))?;
            (scripted(&text, (0, 0))?, Some(text))
        }
        Mode::Live => (live(backend.page_cache.as_deref())?, None),
    };
    let id = new_session_id();
    let mut session = Session::new(id.clone(), problem, config, backends)?;
    session.attach_store(store, &text)?;
    if let Some(transcript) = transcript {
        let path = store.session_dir(&id).join(TRANSCRIPT_FILE);
        std::fs::write(&path, transcript).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
    }
    eprintln!("session {id}");
    drive(store, session.with_gate(gate_for(interactive)))
}

/// Runs a session and reports how it ended.
fn drive(store: &SessionStore, mut session: Session) -> Outcome {
    let id = session.id().to_string();
    let result = session.run();
    let state = session.into_state();
    match result? {
        Phase::Finalized => {
            let export = store.export(&id)?;
            let metric = RunSummary::of(&state).final_metric.map(|m| format!(" {}={}", m.name, m.value)).unwrap_or_default();
            println!("{id} finalized v{}{metric}", state.final_version.unwrap_or_default());
            println!("{}", export.display());
            Ok(())
        }
        Phase::AwaitingFeedback => {
            println!("{id} paused for feedback");
            Ok(())
        }
        phase => {
            let reason = state.errors.last().cloned().unwrap_or_default();
            Err(Failure::new(EXIT_SESSION_FAILED, format!("session {id} ended in {phase:?}: {reason}")))
        }
    }
}

fn resume(store: &SessionStore, id: &str, page_cache: Option<PathBuf>, pause_for_feedback: bool) -> Outcome {
    let state = store.load(id)?;
    match state.phase {
        Phase::Finalized => {
            println!("{id} is already finalized");
            Ok(())
        }
        Phase::Failed => {
            let new_id = new_session_id();
            let transcript = std::fs::read_to_string(store.session_dir(id).join(TRANSCRIPT_FILE)).ok();
            let backends = match &transcript {
                Some(text) => scripted(text, (0, 0))?,
                None => live(page_cache.as_deref())?,
            };
            let session = Session::fork(store, id, &new_id, backends)?;
            if let Some(text) = transcript {
                let path = store.session_dir(&new_id).join(TRANSCRIPT_FILE);
                std::fs::write(&path, text).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
            }
            eprintln!("session {id} failed; starting over as {new_id}");
            drive(store, session.with_gate(gate_for(pause_for_feedback)))
        }
        _ => {
            let backends = reopened_backends(store, &state, page_cache.as_deref())?;
            let session = Session::open(store, id, backends)?;
            drive(store, session.with_gate(gate_for(pause_for_feedback)))
        }
    }
}

fn feedback(store: &SessionStore, id: &str, text: String, page_cache: Option<PathBuf>) -> Outcome {
    if text.len() > MAX_FEEDBACK_BYTES {
        return Err(Failure::new(EXIT_USAGE, format!("feedback is {} bytes, over the {MAX_FEEDBACK_BYTES} byte limit", text.len())));
    }
    let state = store.load(id)?;
    if state.phase != Phase::AwaitingFeedback {
        return Err(Failure::new(EXIT_WRONG_PHASE, format!("session {id} is in {:?}, not awaiting feedback", state.phase)));
    }
    let backends = reopened_backends(store, &state, page_cache.as_deref())?;
    // Only this gate is answered; the session parks again at the next one.
    let gate = Arc::new(synthkit_core::session::QueuedGate::new([GateDecision::Feedback(text)]));
    drive(store, Session::open(store, id, backends)?.with_gate(gate))
}

fn post_feedback(server: &str, id: &str, text: &str) -> Outcome {
    let url = format!("{}/sessions/{id}/feedback", server.trim_end_matches('/'));
    let response = reqwest::blocking::Client::new()
        .post(&url)
        .json(&serde_json::json!({ "text": text }))
        .send()
        .map_err(|e| Failure::new(EXIT_BACKEND, format!("{url}: {e}")))?;
    let status = response.status().as_u16();
    let body = response.text().unwrap_or_default();
    match status {
        200..=299 => {
            println!("{id} feedback accepted");
            Ok(())
        }
        404 => Err(Failure::new(EXIT_NOT_FOUND, format!("session {id} not found: {body}"))),
        409 => Err(Failure::new(EXIT_WRONG_PHASE, body)),
        400 | 413 => Err(Failure::new(EXIT_USAGE, body)),
        _ => Err(Failure::new(EXIT_OTHER, format!("{url}: {status} {body}"))),
    }
}

#[derive(Serialize)]
struct VersionLine<'a> {
    version: u32,
    origin: Origin,
    parent_version: Option<u32>,
    runs: Vec<&'a RunRecord>,
}

#[derive(Serialize)]
struct ShowView<'a> {
    summary: RunSummary,
    target: Option<&'a str>,
    versions: Vec<VersionLine<'a>>,
    iterations: &'a [IterationRecord],
    warnings: &'a [String],
    errors: &'a [String],
}

fn run_line(run: &RunRecord) -> String {
    let status = serde_json::to_value(run.report.status).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    match &run.metric {
        Some(m) => format!("{status} {}={}", m.name, m.value),
        None => status,
    }
}

fn show(store: &SessionStore, id: &str, json: bool) -> Outcome {
    let state = store.load(id)?;
    let view = ShowView {
        summary: RunSummary::of(&state),
        target: state.problem.as_ref().map(|p| p.target.as_str()),
        versions: state
            .versions
            .iter()
            .map(|v| VersionLine {
                version: v.version,
                origin: v.origin,
                parent_version: v.parent_version,
                runs: state.runs_of(v.version).collect(),
            })
            .collect(),
        iterations: &state.iterations,
        warnings: &state.warnings,
        errors: &state.errors,
    };
    let mut out = std::io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, &view).expect("view serializes");
        writeln!(out).ok();
        return Ok(());
    }
    let s = &view.summary;
    writeln!(out, "session {}  phase {:?}", s.session_id, s.phase).ok();
    if let Some(target) = view.target {
        writeln!(out, "target: {}", target.lines().next().unwrap_or_default()).ok();
    }
    writeln!(out, "versions:").ok();
    for v in &view.versions {
        let origin = serde_json::to_value(v.origin).ok().and_then(|o| o.as_str().map(str::to_owned)).unwrap_or_default();
        let parent = v.parent_version.map(|p| format!(" (from v{p})")).unwrap_or_default();
        let runs: Vec<String> = v.runs.iter().map(|r| run_line(r)).collect();
        writeln!(out, "  v{} {origin}{parent}  {}", v.version, runs.join(", ")).ok();
    }
    if let Some(baseline) = &state.baseline {
        let metric = baseline.metric.as_ref().map(|m| format!(" {}={}", m.name, m.value)).unwrap_or_default();
        writeln!(out, "baseline: v{}{metric}", baseline.version).ok();
    }
    writeln!(out, "iterations: {}", view.iterations.len()).ok();
    for record in view.iterations {
        let version = record.version.map(|v| format!("v{v}")).unwrap_or_else(|| "-".into());
        let metric = record.metric.as_ref().map(|m| format!(" {}={}", m.name, m.value)).unwrap_or_default();
        writeln!(out, "  #{} {version}{metric}", record.index + 1).ok();
    }
    if let Some(v) = s.final_version {
        let metric = s.final_metric.as_ref().map(|m| format!(" {}={}", m.name, m.value)).unwrap_or_default();
        writeln!(out, "final: v{v}{metric}").ok();
    }
    if let Some(secs) = s.wall_clock_secs {
        writeln!(out, "wall clock: {secs:.1}s").ok();
    }
    let t = &s.traffic;
    writeln!(out, "traffic: {} bytes sent, {} bytes received, {} requests", t.bytes_sent, t.bytes_received, t.request_count).ok();
    for error in view.errors {
        writeln!(out, "error: {error}").ok();
    }
    Ok(())
}

fn eval(dir: &Path, runs: Option<usize>, threshold: f64, json: bool) -> Outcome {
    if !dir.is_dir() {
        return Err(Failure::new(EXIT_NOT_FOUND, format!("{} is not a directory", dir.display())));
    }
    let store = SessionStore::new(dir);
    let mut ids = store.list()?;
    ids.sort();
    if let Some(n) = runs {
        if ids.len() < n {
            return Err(Failure::new(EXIT_OTHER, format!("{} holds {} sessions, fewer than --runs {n}", dir.display(), ids.len())));
        }
        ids.truncate(n);
    }
    let states = ids.iter().map(|id| store.load(id)).collect::<Result<Vec<_>, _>>()?;
    let summary = compute_esr_air(&states, threshold).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", dir.display())))?;
    if json {
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    } else {
        println!(
            "esr={:?} air={:?} runs={} reaching={} threshold={:?}",
            summary.esr, summary.air, summary.runs, summary.reaching, summary.threshold
        );
    }
    Ok(())
}

fn serve(sessions_dir: &Path, addr: SocketAddr, backend: &BackendArgs, base_dir: PathBuf) -> Outcome {
    let backend = match mode_of(backend)? {
        Mode::Transcript => BackendMode::Transcript(absolute(backend.transcript.as_deref().expect("checked by mode_of"))?),
        Mode::Live => BackendMode::Live { page_cache: backend.page_cache.clone() },
    };
    let config = ServerConfig {
        sessions_dir: sessions_dir.to_path_buf(),
        backend,
        base_dir: absolute(&base_dir)?,
        defaults: SessionConfig::default(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    runtime
        .block_on(synthkit_server::serve(config, addr))
        .map_err(|e| Failure::new(EXIT_OTHER, format!("serve on {addr}: {e}")))
}
