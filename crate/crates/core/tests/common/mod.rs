#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration as ChronoDuration, Utc};
use synthkit_core::llm::ScriptedBackend;
use synthkit_core::{Backends, SessionConfig, SessionStore, UserProblem};

pub fn fixture(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(path)
}

pub fn heartbeat_problem() -> (UserProblem, String) {
    UserProblem::load(&fixture("heartbeat/problem.toml")).unwrap()
}

pub fn heartbeat_transcript() -> String {
    std::fs::read_to_string(fixture("heartbeat/transcript.jsonl")).unwrap()
}

pub fn heartbeat_backend() -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::from_text(&heartbeat_transcript()).unwrap())
}

pub fn quick_config() -> SessionConfig {
    let mut config = SessionConfig::default();
    config.limits.wall_timeout = std::time::Duration::from_secs(30);
    config
}

/// A clock that ticks one second per reading from a fixed epoch.
pub fn ticking_clock() -> Arc<dyn Fn() -> DateTime<Utc> + Send + Sync> {
    let tick = Arc::new(std::sync::atomic::AtomicI64::new(0));
    Arc::new(move || {
        let n = tick.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        DateTime::from_timestamp(1_700_000_000, 0).unwrap() + ChronoDuration::seconds(n)
    })
}

pub struct Ran {
    pub store: SessionStore,
    pub backend: Arc<ScriptedBackend>,
    pub dir: tempfile::TempDir,
}

/// Runs the scripted heartbeat session headless into a fresh store.
pub fn run_heartbeat(id: &str) -> (Ran, synthkit_core::Phase) {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    let backend = heartbeat_backend();
    let (problem, text) = heartbeat_problem();
    let mut session = synthkit_core::Session::new(id, problem, quick_config(), Backends::scripted(backend.clone()))
        .unwrap()
        .with_clock(ticking_clock());
    session.attach_store(&store, &text).unwrap();
    let phase = session.run().unwrap();
    (Ran { store, backend, dir }, phase)
}
