//! HTTP API over the session store.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | [`CreateSession`] | `201 {"id", "phase"}` |
//! | GET | `/sessions/{id}` | | [`Snapshot`] |
//! | GET | `/sessions/{id}/events?cursor=N` | | SSE, one event per line, `id` = seq |
//! | POST | `/sessions/{id}/feedback` | `{"text"}` | `202`, or 409 / 413 |
//! | POST | `/sessions/{id}/continue` | `{"stop": bool}` (optional) | `202`, or 409 |
//! | GET | `/sessions/{id}/versions/{n}` | | [`VersionView`] |
//! | GET | `/sessions/{id}/export` | | [`ExportView`] |
//! | GET | `/healthz` | | `{"status": "ok"}` |

mod error;
pub mod gate;
mod hub;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use synthkit_core::config::Overrides;
use synthkit_core::llm::ScriptedBackend;
use synthkit_core::program::{unified_diff, RunRecord};
use synthkit_core::retrieval::PageCache;
use synthkit_core::session::{new_session_id, MAX_FEEDBACK_BYTES};
use synthkit_core::store::RunSummary;
use synthkit_core::{
    Backends, GateDecision, Origin, Phase, Session, SessionConfig, SessionEvent, SessionState, SessionStore, UserProblem,
};

pub use error::ApiError;
pub use gate::ChannelGate;
use hub::{Hub, LiveSession};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 1 << 20;

/// Name of the transcript copy kept with transcript-mode sessions.
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

#[derive(Clone, Debug)]
pub enum BackendMode {
    /// Services configured from the environment.
    Live { page_cache: Option<PathBuf> },
    /// Every session replays this transcript unless its request carries one.
    Transcript(PathBuf),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub sessions_dir: PathBuf,
    pub backend: BackendMode,
    /// Relative dataset paths in uploaded problems resolve against this.
    pub base_dir: PathBuf,
    pub defaults: SessionConfig,
}

struct Inner {
    config: ServerConfig,
    store: SessionStore,
    hub: Hub,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        let store = SessionStore::new(&config.sessions_dir);
        Self(Arc::new(Inner { config, store, hub: Hub::default() }))
    }

    pub fn store(&self) -> &SessionStore {
        &self.0.store
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/continue", post(continue_session))
        .route("/sessions/{id}/versions/{n}", get(version))
        .route("/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(config: ServerConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// The problem file, as TOML text.
    pub problem: String,
    /// Scripted replies; when absent the server's backend mode decides.
    #[serde(default)]
    pub transcript: Option<String>,
    #[serde(default, flatten)]
    pub overrides: Overrides,
}

impl Inner {
    fn backends(&self, transcript: Option<&str>, position: (usize, usize)) -> Result<Backends, ApiError> {
        let text = match (transcript, &self.config.backend) {
            (Some(text), _) => text.to_string(),
            (None, BackendMode::Transcript(path)) => std::fs::read_to_string(path)
                .map_err(|e| ApiError::Internal(format!("cannot read transcript {}: {e}", path.display())))?,
            (None, BackendMode::Live { page_cache }) => {
                return Backends::live_from_env(page_cache.as_deref().map(PageCache::new)).map_err(ApiError::BadRequest);
            }
        };
        let backend = ScriptedBackend::from_text(&text).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        backend.resume_at(position.0, position.1);
        Ok(Backends::scripted(Arc::new(backend)))
    }

    fn stored_transcript(&self, id: &str) -> Option<String> {
        std::fs::read_to_string(self.store.session_dir(id).join(TRANSCRIPT_FILE)).ok()
    }

    fn load(&self, id: &str) -> Result<(SessionState, Option<Arc<LiveSession>>), ApiError> {
        match self.hub.get(id) {
            Some(live) => Ok((live.snapshot(), Some(live))),
            None => Ok((self.store.load(id)?, None)),
        }
    }
}

async fn create_session(
    State(app): State<AppState>,
    Json(request): Json<CreateSession>,
) -> Result<impl IntoResponse, ApiError> {
    let inner = &app.0;
    let mut problem = UserProblem::parse(&request.problem).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    problem.resolve_dataset(&inner.config.base_dir);
    let config = request.overrides.apply(inner.config.defaults.clone()).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let backends = inner.backends(request.transcript.as_deref(), (0, 0))?;
    let id = new_session_id();
    let mut session = Session::new(id.clone(), problem, config, backends).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    session.attach_store(&inner.store, &request.problem).map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Some(text) = &request.transcript {
        let path = inner.store.session_dir(&id).join(TRANSCRIPT_FILE);
        std::fs::write(&path, text).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    }
    let live = inner.hub.launch(session, Vec::new(), Arc::new(ChannelGate::new()));
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "phase": live.phase() }))))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: SessionState,
    /// True while this process drives the session (including a parked gate).
    pub running: bool,
    pub awaiting_feedback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

async fn snapshot(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Snapshot>, ApiError> {
    let (state, live) = app.0.load(&id)?;
    Ok(Json(Snapshot {
        awaiting_feedback: state.phase == Phase::AwaitingFeedback,
        running: live.as_ref().is_some_and(|l| l.is_running()),
        error: live.and_then(|l| l.error()),
        state,
    }))
}

#[derive(Debug, Default, Deserialize)]
struct Cursor {
    #[serde(default)]
    cursor: u64,
}

fn sse_event(event: &SessionEvent) -> Event {
    let data = serde_json::to_string(event).expect("events serialize");
    Event::default().id(event.seq.to_string()).event(event.kind.name()).data(data)
}

/// Events after the cursor, then the live tail while the session runs.
async fn events(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<Cursor>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .unwrap_or(0);
    let cursor = query.cursor.max(resume);
    let live = app.0.hub.get(&id);
    let backlog = match &live {
        Some(_) => Vec::new(),
        None => app.0.store.read_events(&id)?.into_iter().filter(|e| e.seq > cursor).collect(),
    };
    struct Tail {
        live: Option<(Arc<LiveSession>, tokio::sync::watch::Receiver<u64>)>,
        pending: std::collections::VecDeque<SessionEvent>,
        cursor: u64,
    }
    let tail = Tail { live: live.map(|l| { let rx = l.subscribe(); (l, rx) }), pending: backlog.into(), cursor };
    let stream = stream::unfold(tail, |mut tail| async move {
        loop {
            if let Some(event) = tail.pending.pop_front() {
                tail.cursor = event.seq;
                return Some((Ok(sse_event(&event)), tail));
            }
            let (live, rx) = tail.live.as_mut()?;
            // Mark the current value seen before reading, so nothing
            // appended after the read is missed.
            rx.borrow_and_update();
            let fresh = live.events_after(tail.cursor);
            if !fresh.is_empty() {
                tail.pending.extend(fresh);
                continue;
            }
            if !live.is_running() {
                return None;
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    text: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContinueBody {
    #[serde(default)]
    stop: bool,
}

async fn feedback(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<FeedbackBody>,
) -> Result<impl IntoResponse, ApiError> {
    if body.text.len() > MAX_FEEDBACK_BYTES {
        return Err(ApiError::PayloadTooLarge(format!(
            "feedback is {} bytes; the limit is {MAX_FEEDBACK_BYTES}",
            body.text.len()
        )));
    }
    steer(&app, &id, GateDecision::Feedback(body.text))
}

async fn continue_session(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<ContinueBody>>,
) -> Result<impl IntoResponse, ApiError> {
    let stop = body.map(|Json(b)| b.stop).unwrap_or(false);
    steer(&app, &id, if stop { GateDecision::Stop } else { GateDecision::Continue })
}

/// Delivers a gate decision, reopening the session when no thread here is
/// parked on it (for example after a restart).
fn steer(app: &AppState, id: &str, decision: GateDecision) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let inner = &app.0;
    let accepted = (StatusCode::ACCEPTED, Json(json!({ "accepted": true })));
    if let Some(live) = inner.hub.get(id).filter(|l| l.is_running()) {
        let phase = live.phase();
        if phase != Phase::AwaitingFeedback {
            return Err(ApiError::WrongPhase(format!("session {id} is in phase {phase}, not awaiting feedback")));
        }
        return match live.gate.offer(decision) {
            Ok(()) => Ok(accepted),
            Err(_) => Err(ApiError::WrongPhase(format!("session {id} already has a decision pending"))),
        };
    }
    let state = inner.store.load(id)?;
    if state.phase != Phase::AwaitingFeedback {
        return Err(ApiError::WrongPhase(format!("session {id} is in phase {}, not awaiting feedback", state.phase)));
    }
    let backends = inner.backends(inner.stored_transcript(id).as_deref(), state.scripted_position())?;
    let session = Session::open(&inner.store, id, backends).map_err(|e| ApiError::Internal(e.to_string()))?;
    let backlog = inner.store.read_events(id)?;
    inner.hub.launch(session, backlog, Arc::new(ChannelGate::preloaded(decision)));
    Ok(accepted)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VersionView {
    pub version: u32,
    pub origin: Origin,
    pub parent_version: Option<u32>,
    pub source: String,
    pub documentation: String,
    /// Unified diff against the parent version; absent for root versions.
    pub diff: Option<String>,
    pub runs: Vec<RunRecord>,
}

async fn version(
    State(app): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, u32)>,
) -> Result<Json<VersionView>, ApiError> {
    let (state, _) = app.0.load(&id)?;
    let program = state.version(n).ok_or_else(|| ApiError::NotFound(format!("session {id} has no version {n}")))?;
    let diff = program.parent_version.and_then(|p| state.version(p)).map(|parent| unified_diff(parent, program));
    Ok(Json(VersionView {
        version: n,
        origin: program.origin,
        parent_version: program.parent_version,
        source: program.source_text.clone(),
        documentation: program.documentation.clone(),
        diff,
        runs: state.runs_of(n).cloned().collect(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportView {
    pub path: PathBuf,
    pub program: String,
    pub readme: String,
    pub problem: String,
    pub summary: RunSummary,
}

fn read(dir: &Path, name: &str) -> Result<String, ApiError> {
    std::fs::read_to_string(dir.join(name)).map_err(|e| ApiError::Internal(format!("{name}: {e}")))
}

async fn export(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ExportView>, ApiError> {
    let store = &app.0.store;
    let dir = store.export(&id)?;
    let state = store.load(&id)?;
    let extension = state.config.as_ref().map_or("py".to_string(), |c| c.limits.script_extension.clone());
    let summary = serde_json::from_str(&read(&dir, "summary.json")?).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(ExportView {
        program: read(&dir, &format!("program.{extension}"))?,
        readme: read(&dir, "README.md")?,
        problem: read(&dir, "problem.toml")?,
        summary,
        path: dir,
    }))
}
