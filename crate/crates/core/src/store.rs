//! On-disk session archives.
//!
//! ```text
//! <root>/sessions/<id>/problem.toml
//!                     /events.log      one JSON event per line
//!                     /events.head     seq of the last committed event
//!                     /versions/v<N>.<ext>, v<N>.md
//!                     /runs/<N>/<k>/   script, stdout, stderr, report.json
//!                     /export/
//! ```
//!
//! Each event is appended with a single write followed by fsync. A torn
//! final line (no trailing newline) is an in-flight event and is dropped on
//! load.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{SessionEvent, MAX_EVENT_LINE_BYTES};
use crate::program::SynthesizedProgram;
use crate::sandbox::{script_name, ExecutionReport};
use crate::state::{ReplayError, SessionState};
use crate::traffic::TrafficTotals;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("corrupt archive at seq {seq}: {reason}")]
    CorruptArchive { seq: u64, reason: String },
    #[error("event seq {seq} serializes to {bytes} bytes, over the {limit} byte line limit")]
    EventTooLarge { seq: u64, bytes: usize, limit: usize },
    #[error("session {id} has no final version to export")]
    NothingToExport { id: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Session ids double as directory names.
pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// The directory holding every session, one subdirectory per id.
#[derive(Clone, Debug)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_session_id(id) && self.session_dir(id).join("events.log").is_file()
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.clone();
        let entries = match fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io { path: dir, source: e }),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Creates the directory of a new session and writes its problem file.
    pub fn create(&self, id: &str, problem_toml: &str) -> Result<SessionWriter, StoreError> {
        if !valid_session_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        let dir = self.session_dir(id);
        if dir.join("events.log").exists() {
            return Err(StoreError::AlreadyExists(id.to_string()));
        }
        for sub in ["versions", "runs", "export"] {
            fs::create_dir_all(dir.join(sub)).map_err(io_err(&dir))?;
        }
        let problem = dir.join("problem.toml");
        fs::write(&problem, problem_toml).map_err(io_err(&problem))?;
        SessionWriter::open(dir, 0)
    }

    /// Opens an existing session for appending after verifying its log.
    pub fn open(&self, id: &str) -> Result<(SessionState, SessionWriter), StoreError> {
        let state = self.load(id)?;
        let writer = SessionWriter::open(self.session_dir(id), state.last_seq)?;
        Ok((state, writer))
    }

    pub fn read_events(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        if !self.exists(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        read_log(&self.session_dir(id))
    }

    /// Rebuilds the session state by replaying its log.
    pub fn load(&self, id: &str) -> Result<SessionState, StoreError> {
        let events = self.read_events(id)?;
        replay(id, &events)
    }

    /// Writes the deliverable bundle into `export/` and returns its path.
    pub fn export(&self, id: &str) -> Result<PathBuf, StoreError> {
        let state = self.load(id)?;
        let program = state.final_program().ok_or_else(|| StoreError::NothingToExport { id: id.to_string() })?;
        let dir = self.session_dir(id);
        let export = dir.join("export");
        fs::create_dir_all(&export).map_err(io_err(&export))?;
        let ext = state.config.as_ref().map_or("py", |c| c.limits.script_extension.as_str());
        let problem_src = dir.join("problem.toml");
        let files = [
            (format!("program.{ext}"), program.source_text.clone()),
            ("README.md".to_string(), program.documentation.clone()),
            ("problem.toml".to_string(), fs::read_to_string(&problem_src).map_err(io_err(&problem_src))?),
            ("summary.json".to_string(), serde_json::to_string_pretty(&RunSummary::of(&state)).expect("summary serializes") + "\n"),
        ];
        for (name, content) in files {
            write_atomic(&export.join(name), content.as_bytes())?;
        }
        Ok(export)
    }
}

/// What `summary.json` in an export bundle holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub session_id: String,
    pub phase: crate::phase::Phase,
    pub final_version: Option<u32>,
    pub final_metric: Option<crate::program::Metric>,
    pub versions: usize,
    pub iterations: usize,
    pub first_run_succeeded: bool,
    pub wall_clock_secs: Option<f64>,
    pub traffic: TrafficTotals,
}

impl RunSummary {
    pub fn of(state: &SessionState) -> Self {
        let final_metric = state.final_version.and_then(|v| {
            state.runs.iter().rev().find(|r| r.version == v).and_then(|r| r.metric.clone())
        });
        let wall_clock_secs = match (state.started_at, state.finished_at) {
            (Some(start), Some(end)) => Some((end - start).num_milliseconds() as f64 / 1000.0),
            _ => None,
        };
        Self {
            session_id: state.session_id.clone(),
            phase: state.phase,
            final_version: state.final_version,
            final_metric,
            versions: state.versions.len(),
            iterations: state.iterations.len(),
            first_run_succeeded: state.first_run_succeeded(),
            wall_clock_secs,
            traffic: state.traffic.clone(),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_head(dir: &Path) -> Result<Option<u64>, StoreError> {
    let path = dir.join("events.head");
    match fs::read_to_string(&path) {
        Ok(text) => text
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| StoreError::CorruptArchive { seq: 0, reason: format!("unreadable events.head {text:?}") }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StoreError::Io { path, source: e }),
    }
}

/// Parses `events.log`, checking line limits and seq continuity against the
/// committed head.
pub fn read_log(dir: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    let path = dir.join("events.log");
    let raw = fs::read(&path).map_err(io_err(&path))?;
    parse_log(&raw, read_head(dir)?)
}

/// Parses the bytes of an event log. A torn final line is ignored; `head` is
/// the last committed seq, when known.
pub fn parse_log(raw: &[u8], head: Option<u64>) -> Result<Vec<SessionEvent>, StoreError> {
    let complete = match raw.iter().rposition(|&b| b == b'\n') {
        Some(i) => &raw[..=i],
        None => &raw[..0],
    };
    let mut events = Vec::new();
    for line in complete.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
        let expected = events.len() as u64 + 1;
        let corrupt = |reason: String| StoreError::CorruptArchive { seq: expected, reason };
        if line.len() > MAX_EVENT_LINE_BYTES {
            return Err(corrupt(format!("line of {} bytes exceeds the limit", line.len())));
        }
        let event: SessionEvent = serde_json::from_slice(line).map_err(|e| corrupt(format!("unparseable event: {e}")))?;
        if event.seq != expected {
            return Err(corrupt(format!("found seq {} where {expected} was expected", event.seq)));
        }
        events.push(event);
    }
    if let Some(head) = head {
        let last = events.len() as u64;
        if last < head {
            return Err(StoreError::CorruptArchive { seq: last + 1, reason: format!("log ends at seq {last} but {head} were committed") });
        }
    }
    Ok(events)
}

pub fn replay(id: &str, events: &[SessionEvent]) -> Result<SessionState, StoreError> {
    SessionState::replay(id, events).map_err(|e: ReplayError| StoreError::CorruptArchive { seq: e.seq(), reason: e.to_string() })
}

/// Single writer of one session directory.
#[derive(Debug)]
pub struct SessionWriter {
    dir: PathBuf,
    log: File,
    last_seq: u64,
}

impl SessionWriter {
    fn open(dir: PathBuf, last_seq: u64) -> Result<Self, StoreError> {
        let path = dir.join("events.log");
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let writer = Self { dir, log, last_seq };
        writer.drop_torn_tail()?;
        Ok(writer)
    }

    /// Truncates an unterminated final line left by a crash.
    fn drop_torn_tail(&self) -> Result<(), StoreError> {
        let path = self.dir.join("events.log");
        let raw = fs::read(&path).map_err(io_err(&path))?;
        let keep = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if keep < raw.len() {
            self.log.set_len(keep as u64).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one event durably. Events must arrive in seq order.
    pub fn append(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        if event.seq != self.last_seq + 1 {
            return Err(StoreError::CorruptArchive {
                seq: event.seq,
                reason: format!("append of seq {} after {}", event.seq, self.last_seq),
            });
        }
        let mut line = serde_json::to_vec(event).expect("events serialize");
        if line.len() > MAX_EVENT_LINE_BYTES {
            return Err(StoreError::EventTooLarge { seq: event.seq, bytes: line.len(), limit: MAX_EVENT_LINE_BYTES });
        }
        line.push(b'\n');
        let path = self.dir.join("events.log");
        self.log.write_all(&line).and_then(|_| self.log.sync_data()).map_err(io_err(&path))?;
        write_atomic(&self.dir.join("events.head"), event.seq.to_string().as_bytes())?;
        self.last_seq = event.seq;
        Ok(())
    }

    /// Writes a version's source and documentation under `versions/`.
    pub fn save_version(&self, program: &SynthesizedProgram, extension: &str) -> Result<(), StoreError> {
        let dir = self.dir.join("versions");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&dir.join(format!("v{}.{extension}", program.version)), program.source_text.as_bytes())?;
        write_atomic(&dir.join(format!("v{}.md", program.version)), program.documentation.as_bytes())
    }

    /// Stores the artifacts of one execution under `runs/<version>/<k>/`.
    pub fn save_run(&self, program: &SynthesizedProgram, extension: &str, report: &ExecutionReport) -> Result<PathBuf, StoreError> {
        let base = self.dir.join("runs").join(program.version.to_string());
        fs::create_dir_all(&base).map_err(io_err(&base))?;
        let count = fs::read_dir(&base).map_err(io_err(&base))?.count();
        let dir = base.join((count + 1).to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&dir.join(script_name(program.version, extension)), program.source_text.as_bytes())?;
        write_atomic(&dir.join("stdout"), report.stdout.as_bytes())?;
        write_atomic(&dir.join("stderr"), report.stderr.as_bytes())?;
        let json = serde_json::to_vec_pretty(report).expect("reports serialize");
        write_atomic(&dir.join("report.json"), &json)?;
        Ok(dir)
    }
}
