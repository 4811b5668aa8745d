//! Runs candidate programs in a fresh working directory and parses the
//! metric line they report.
//!
//! Isolation is a per-run directory, a cleared environment with an allowlist,
//! and a process group that is killed as a whole on timeout and after exit.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{UserProblem, INPUT_PLACEHOLDER, SCRIPT_PLACEHOLDER};
use crate::program::{Metric, SynthesizedProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Success,
    NonzeroExit,
    Timeout,
    LaunchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub status: ExecutionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    #[serde(default)]
    pub stdout_truncated: bool,
    #[serde(default)]
    pub stderr_truncated: bool,
    pub duration_secs: f64,
    #[serde(default)]
    pub command: Vec<String>,
}

fn tail(text: &str, max_bytes: usize) -> (&str, bool) {
    if text.len() <= max_bytes {
        return (text, false);
    }
    let mut start = text.len() - max_bytes;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    (&text[start..], true)
}

impl ExecutionReport {
    fn launch_failure(command: Vec<String>, reason: String) -> Self {
        Self {
            status: ExecutionStatus::LaunchFailure,
            exit_code: None,
            signal: None,
            stdout: String::new(),
            stderr: reason,
            stdout_truncated: false,
            stderr_truncated: false,
            duration_secs: 0.0,
            command,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status == ExecutionStatus::Success
    }

    /// Copy keeping only the last `max_bytes` of each stream.
    pub fn clamped(&self, max_bytes: usize) -> Self {
        let (stdout, cut_out) = tail(&self.stdout, max_bytes);
        let (stderr, cut_err) = tail(&self.stderr, max_bytes);
        Self {
            stdout: stdout.to_string(),
            stderr: stderr.to_string(),
            stdout_truncated: self.stdout_truncated || cut_out,
            stderr_truncated: self.stderr_truncated || cut_err,
            ..self.clone()
        }
    }

    /// What the debug prompt embeds: the outcome and the tail of stderr.
    pub fn failure_log(&self, max_stderr_bytes: usize) -> String {
        let outcome = match self.status {
            ExecutionStatus::Success => "exited successfully".to_string(),
            ExecutionStatus::NonzeroExit => match (self.exit_code, self.signal) {
                (Some(code), _) => format!("exited with code {code}"),
                (None, Some(signal)) => format!("was killed by signal {signal}"),
                (None, None) => "failed".to_string(),
            },
            ExecutionStatus::Timeout => format!("was killed after the {:.0}s time limit", self.duration_secs),
            ExecutionStatus::LaunchFailure => "could not be started".to_string(),
        };
        let (stderr, cut) = tail(&self.stderr, max_stderr_bytes);
        let (stdout, _) = tail(&self.stdout, 2048);
        let mut log = format!("Command: {}\nThe program {outcome}.\n", self.command.join(" "));
        log.push_str(if cut || self.stderr_truncated { "--- stderr (tail) ---\n" } else { "--- stderr ---\n" });
        log.push_str(stderr);
        if !stdout.trim().is_empty() {
            log.push_str("\n--- stdout (tail) ---\n");
            log.push_str(stdout);
        }
        log
    }
}

pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "VIRTUAL_ENV"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub wall_timeout: Duration,
    pub max_output_bytes: usize,
    /// Parent of the per-run directories; the system temp dir when absent.
    pub work_root: Option<PathBuf>,
    pub env_allowlist: Vec<String>,
    pub script_extension: String,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            wall_timeout: Duration::from_secs(600),
            max_output_bytes: 1 << 20,
            work_root: None,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            script_extension: "py".into(),
        }
    }
}

/// Captured stream shared with its reader thread.
#[derive(Clone, Default)]
struct Capture(Arc<Mutex<(Vec<u8>, bool)>>);

impl Capture {
    fn spawn(self, mut source: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<()> {
        thread::spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match source.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let mut guard = self.0.lock().unwrap();
                        let room = cap.saturating_sub(guard.0.len());
                        guard.0.extend_from_slice(&buf[..n.min(room)]);
                        if n > room {
                            guard.1 = true;
                        }
                    }
                }
            }
        })
    }

    fn take(&self) -> (String, bool) {
        let guard = self.0.lock().unwrap();
        (String::from_utf8_lossy(&guard.0).into_owned(), guard.1)
    }
}

fn kill_group(pgid: u32) {
    // SAFETY: killpg only sends a signal; ESRCH for an empty group is fine.
    unsafe {
        libc::killpg(pgid as libc::pid_t, libc::SIGKILL);
    }
}

pub fn script_name(version: u32, extension: &str) -> String {
    format!("program_v{version}.{extension}")
}

/// Splits the interpreter command and substitutes the placeholders.
pub fn build_command(interpreter_command: &str, script: &Path, input: &Path) -> Result<Vec<String>, String> {
    let tokens = shlex::split(interpreter_command).ok_or_else(|| "unbalanced quotes in interpreter_command".to_string())?;
    if tokens.is_empty() {
        return Err("interpreter_command is empty".into());
    }
    Ok(tokens
        .into_iter()
        .map(|t| {
            t.replace(SCRIPT_PLACEHOLDER, &script.display().to_string())
                .replace(INPUT_PLACEHOLDER, &input.display().to_string())
        })
        .collect())
}

fn prepare(dir: &Path, program: &SynthesizedProgram, problem: &UserProblem, limits: &ExecutionLimits) -> std::io::Result<(PathBuf, PathBuf)> {
    let script = dir.join(script_name(program.version, &limits.script_extension));
    std::fs::write(&script, &program.source_text)?;
    let input = dir.join("dataset");
    match &problem.dataset_path {
        Some(path) => {
            let target = std::fs::canonicalize(path)?;
            std::os::unix::fs::symlink(target, &input)?;
        }
        None => std::fs::create_dir(&input)?,
    }
    Ok((script, input))
}

/// Runs one program version. Every failure mode is reported through the
/// status; nothing escapes as an error.
pub fn execute(program: &SynthesizedProgram, problem: &UserProblem, limits: &ExecutionLimits) -> ExecutionReport {
    let workdir = match &limits.work_root {
        Some(root) => std::fs::create_dir_all(root).and_then(|_| tempfile::Builder::new().prefix("run-").tempdir_in(root)),
        None => tempfile::Builder::new().prefix("synthkit-run-").tempdir(),
    };
    let workdir = match workdir {
        Ok(dir) => dir,
        Err(e) => return ExecutionReport::launch_failure(Vec::new(), format!("cannot create working directory: {e}")),
    };
    let (script, input) = match prepare(workdir.path(), program, problem, limits) {
        Ok(paths) => paths,
        Err(e) => return ExecutionReport::launch_failure(Vec::new(), format!("cannot prepare working directory: {e}")),
    };
    // Paths relative to the run directory keep tracebacks free of temp names.
    let relative = |p: &Path| p.strip_prefix(workdir.path()).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let argv = match build_command(&problem.interpreter_command, &relative(&script), &relative(&input)) {
        Ok(argv) => argv,
        Err(e) => return ExecutionReport::launch_failure(Vec::new(), e),
    };
    let mut report = run(&argv, workdir.path(), limits);
    // Interpreters print absolute script paths in tracebacks; the temp dir
    // name would make otherwise identical runs differ.
    let mut prefixes = vec![workdir.path().to_path_buf()];
    prefixes.extend(std::fs::canonicalize(workdir.path()).ok());
    for prefix in prefixes {
        let prefix = format!("{}/", prefix.display());
        report.stdout = report.stdout.replace(&prefix, "");
        report.stderr = report.stderr.replace(&prefix, "");
    }
    report
}

/// Runs `argv` in `dir` under the limits.
pub fn run(argv: &[String], dir: &Path, limits: &ExecutionLimits) -> ExecutionReport {
    let mut command = Command::new(&argv[0]);
    command
        .args(&argv[1..])
        .current_dir(dir)
        .env_clear()
        .env("TMPDIR", dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for name in &limits.env_allowlist {
        if let Some(value) = std::env::var_os(name) {
            command.env(name, value);
        }
    }
    let started = Instant::now();
    let mut child = match command.spawn() {
        Ok(child) => child,
        Err(e) => return ExecutionReport::launch_failure(argv.to_vec(), format!("cannot launch {}: {e}", argv[0])),
    };
    let pgid = child.id();
    let (out, err) = (Capture::default(), Capture::default());
    let readers = [
        out.clone().spawn(child.stdout.take().expect("piped stdout"), limits.max_output_bytes),
        err.clone().spawn(child.stderr.take().expect("piped stderr"), limits.max_output_bytes),
    ];

    let deadline = started + limits.wall_timeout;
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                kill_group(pgid);
                timed_out = true;
                break child.wait().ok();
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(_) => {
                kill_group(pgid);
                break child.wait().ok();
            }
        }
    };
    let duration_secs = started.elapsed().as_secs_f64();
    // Whatever the program left running in its group goes too.
    kill_group(pgid);
    let join_deadline = Instant::now() + Duration::from_secs(2);
    for reader in readers {
        while !reader.is_finished() && Instant::now() < join_deadline {
            thread::sleep(Duration::from_millis(5));
        }
        if reader.is_finished() {
            let _ = reader.join();
        }
    }
    let (stdout, stdout_truncated) = out.take();
    let (stderr, stderr_truncated) = err.take();
    let exit_code = status.and_then(|s| s.code());
    let signal = status.and_then(|s| s.signal());
    let status = if timed_out {
        ExecutionStatus::Timeout
    } else if exit_code == Some(0) {
        ExecutionStatus::Success
    } else {
        ExecutionStatus::NonzeroExit
    };
    ExecutionReport {
        status,
        exit_code: if timed_out { None } else { exit_code },
        signal,
        stdout,
        stderr,
        stdout_truncated,
        stderr_truncated,
        duration_secs,
        command: argv.to_vec(),
    }
}

pub const METRIC_PREFIX: &str = "FINAL_METRIC:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed metric line {line:?}: expected `FINAL_METRIC: <name>=<finite number>`")]
pub struct MalformedMetricLine {
    pub line: String,
}

/// Parses the last `FINAL_METRIC: <name>=<value>` line of a successful run.
pub fn parse_metric(report: &ExecutionReport) -> Result<Option<Metric>, MalformedMetricLine> {
    if report.status != ExecutionStatus::Success {
        return Ok(None);
    }
    parse_metric_text(&report.stdout)
}

pub fn parse_metric_text(stdout: &str) -> Result<Option<Metric>, MalformedMetricLine> {
    let Some(line) = stdout.lines().map(str::trim).rfind(|l| l.starts_with(METRIC_PREFIX)) else {
        return Ok(None);
    };
    let malformed = || MalformedMetricLine { line: line.to_string() };
    let (name, value) = line[METRIC_PREFIX.len()..].split_once('=').ok_or_else(malformed)?;
    let name = name.trim();
    let valid_name = name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'));
    let value: f64 = value.trim().parse().map_err(|_| malformed())?;
    if !valid_name || !value.is_finite() {
        return Err(malformed());
    }
    Ok(Some(Metric::new(name, value)))
}
