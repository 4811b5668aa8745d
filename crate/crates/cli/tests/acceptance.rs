//! Acceptance suite: one line per criterion, `PASS` or `FAIL` with the reason.
//! Runs offline against the checked-in fixtures.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::DateTime;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use synthkit_core::events::{Artifact, EventKind, SessionEvent, StageName};
use synthkit_core::llm::{Channel, ScriptedBackend};
use synthkit_core::program::{Baseline, IterationRecord};
use synthkit_core::retrieval::{KnowledgeChunk, KnowledgeIndex, RELEVANCE_TEMPLATE, TERMINOLOGY_TEMPLATE};
use synthkit_core::sandbox::{execute, ExecutionLimits, ExecutionReport, ExecutionStatus};
use synthkit_core::synthesis::{render_prompt, static_gate, Bindings, GateConfig, PromptTemplate, Stage};
use synthkit_core::{
    Backends, Metric, Origin, Phase, PhaseEvent, Session, SessionConfig, SessionStore, StoreError, SynthesizedProgram,
    UserProblem,
};

type Check = fn() -> String;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("end-to-end transcript run", end_to_end),
        ("debug loop: buggy then fixed, never fixed", debug_loop),
        ("prompt structure and goldens", prompt_structure),
        ("retrieval exactness", retrieval_exactness),
        ("static gate corpus", static_gate_corpus),
        ("sandbox matrix", sandbox_matrix),
        ("traffic accounting", traffic_accounting),
        ("ESR/AIR", esr_air),
        ("persistence replay and corruption", persistence),
    ];
    // Failed assertions are reported on the criterion line instead.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS  {name} ({detail}; {:.1}s)", started.elapsed().as_secs_f64()),
            Err(panic) => {
                failed += 1;
                let reason = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                println!("FAIL  {name}: {}", reason.replace('\n', " | "));
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn heartbeat(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/heartbeat").join(file)
}

fn core_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core").join(rel)
}

fn transcript() -> String {
    std::fs::read_to_string(heartbeat("transcript.jsonl")).unwrap()
}

fn quick_config() -> SessionConfig {
    let mut config = SessionConfig::default();
    config.limits.wall_timeout = Duration::from_secs(30);
    config
}

/// The heartbeat session run in-process, headless.
fn heartbeat_session(store: &SessionStore, id: &str) -> (Arc<ScriptedBackend>, Phase) {
    let backend = Arc::new(ScriptedBackend::from_text(&transcript()).unwrap());
    let (problem, text) = UserProblem::load(&heartbeat("problem.toml")).unwrap();
    let mut session = Session::new(id, problem, quick_config(), Backends::scripted(backend.clone())).unwrap();
    session.attach_store(store, &text).unwrap();
    let phase = session.run().unwrap();
    (backend, phase)
}

fn normalize(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, field) in map.iter_mut() {
                match key.as_str() {
                    "session_id" | "timestamp" | "fetched_at" | "duration_secs" | "latency" => *field = Value::Null,
                    _ => normalize(field),
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(normalize),
        _ => {}
    }
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn end_to_end() -> String {
    let mut archives = Vec::new();
    let mut slowest = 0.0f64;
    for run in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let started = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_synthkit"))
            .arg("--sessions-dir")
            .arg(dir.path())
            .args(["new", "--mode", "transcript", "--timeout", "30", "--problem"])
            .arg(heartbeat("problem.toml"))
            .arg("--transcript")
            .arg(heartbeat("transcript.jsonl"))
            .output()
            .unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        slowest = slowest.max(elapsed);
        assert!(elapsed < 60.0, "run {run} took {elapsed:.1}s");
        assert_eq!(out.status.code(), Some(0), "run {run}: {}", String::from_utf8_lossy(&out.stderr));

        let store = SessionStore::new(dir.path());
        let id = store.list().unwrap().remove(0);
        let state = store.load(&id).unwrap();
        assert_eq!(state.phase, Phase::Finalized);
        assert_eq!(state.iterations.len(), 5, "iteration records");
        let program = state.final_program().expect("a final program");
        assert!(program.source_text.contains("def main"));
        let export = dir_files(&store.session_dir(&id).join("export"));
        assert_eq!(export.keys().collect::<Vec<_>>(), ["README.md", "problem.toml", "program.py", "summary.json"]);
        let readme = String::from_utf8(export["README.md"].clone()).unwrap();
        assert!(readme.trim_start().starts_with('#') && readme.len() > 100, "documentation is not Markdown: {readme:?}");
        assert_eq!(export["program.py"], program.source_text.as_bytes());

        let events: Vec<Value> = store
            .read_events(&id)
            .unwrap()
            .iter()
            .map(|e| {
                let mut v = serde_json::to_value(e).unwrap();
                normalize(&mut v);
                v
            })
            .collect();
        archives.push((events, dir_files(&store.session_dir(&id).join("versions"))));
    }
    for (run, other) in archives.iter().enumerate().skip(1) {
        assert_eq!(archives[0].0.len(), other.0.len(), "run {run} event count");
        for (a, b) in archives[0].0.iter().zip(&other.0) {
            assert_eq!(a, b, "run {run} diverges at seq {}", a["seq"]);
        }
        assert_eq!(archives[0].1, other.1, "run {run} version files");
    }
    format!("3 identical runs, {} events, slowest {slowest:.1}s", archives[0].0.len())
}

fn tiny_problem() -> UserProblem {
    UserProblem::parse("target = \"Print a score.\"\ninterpreter_command = \"python3 {script} {input}\"\n").unwrap()
}

fn debug_loop() -> String {
    // Buggy then fixed: the heartbeat v1 reads a missing column, its first
    // debug round repairs it.
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    heartbeat_session(&store, "repaired");
    let state = store.load("repaired").unwrap();
    let baseline = state.baseline.as_ref().expect("a baseline");
    let before: Vec<_> = state.versions.iter().filter(|v| v.version <= baseline.version).collect();
    assert_eq!(before.len(), 2, "versions before the baseline");
    assert_eq!((before[0].version, before[0].origin, before[0].parent_version), (1, Origin::Integration, None));
    assert_eq!((before[1].version, before[1].origin, before[1].parent_version), (2, Origin::DebugFix, Some(1)));
    assert_ne!(state.runs_of(1).next().unwrap().report.status, ExecutionStatus::Success);
    assert_eq!(state.runs_of(2).next().unwrap().report.status, ExecutionStatus::Success);
    assert_eq!(baseline.version, 2);

    // Never fixed: every debug reply crashes the same way.
    let crash = "```python\ndef compute():\n    return 1 / 0\n\n\ndef report(value):\n    print(value)\n\n\n\
if __name__ == \"__main__\":\n    report(compute())\n```\n\n````markdown\n# Crash\n````";
    let design = "### Step 1: Compute\nFunction: compute\nActions:\n- divide\nIO: () -> float\n\n\
### Step 2: Report\nFunction: report\nActions:\n- print\nIO: float -> None";
    let max_rounds = 4;
    let mut lines = vec![
        json!({"match": "Identify the key terminologies", "reply": "TERMINOLOGIES: arithmetic"}),
        json!({"channel": "search", "unavailable": true}),
        json!({"match": "preliminary algorithm outline", "reply": "1. Compute: divide.\n2. Report: print."}),
        json!({"match": "Elaborate on each step", "reply": design}),
        json!({"match": "Write the Python function `compute`", "reply": "```python\ndef compute():\n    return 1 / 0\n```"}),
        json!({"match": "Write the Python function `report`", "reply": "```python\ndef report(value):\n    print(value)\n```"}),
        json!({"match": "Integrate the code segments", "reply": crash}),
    ];
    // One spare reply, so a loop that overruns would be visible.
    for _ in 0..=max_rounds {
        lines.push(json!({"match": "failed when executed", "reply": crash}));
    }
    let text = lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n");
    let backend = Arc::new(ScriptedBackend::from_text(&text).unwrap());
    let mut config = quick_config();
    config.debug.max_rounds = max_rounds;
    let mut session = Session::new("stuck", tiny_problem(), config, Backends::scripted(backend.clone())).unwrap();
    let phase = session.run().unwrap();
    let state = session.state();
    assert!(state.audit.iter().any(|a| a.event == PhaseEvent::DebugExhausted), "no DebugExhausted transition");
    let debug_calls = backend
        .wire_log()
        .iter()
        .filter(|w| w.channel == Channel::Chat && w.request.contains("failed when executed"))
        .count();
    assert_eq!(debug_calls, max_rounds as usize, "debug calls");
    assert_eq!(backend.remaining_chat(), 1);
    assert_eq!(phase, Phase::Failed, "headless sessions fail after exhaustion");
    format!("v1 integration -> v2 debug fix succeeds; exhaustion after {debug_calls} of {max_rounds} rounds")
}

fn sample(name: &str, problem: &UserProblem) -> String {
    match name {
        "user_problem" => problem.render(),
        "context" => "[1] Pan-Tompkins QRS detection (https://ecg.example.org/pan-tompkins)\n\
The Pan-Tompkins algorithm band-pass filters the ECG, differentiates it and squares the result."
            .into(),
        "outline" => "1. Load data: read samples and annotations.\n2. Detect peaks: threshold local maxima.\n\
3. Evaluate: accuracy against the annotations."
            .into(),
        "design" | "subtask" => {
            "### Step 1: Load data\nFunction: load_ecg\nActions:\n- read the CSV\nIO: path -> (signal, beats)".into()
        }
        "function_name" => "load_ecg".into(),
        "modules" => "```python\ndef load_ecg(path):\n    return [], []\n```".into(),
        "interpreter_command" => "python3 {script} {input}".into(),
        "source" => "import sys\nprint(undefined_name)\n".into(),
        "error_log" => "Traceback (most recent call last):\nNameError: name 'undefined_name' is not defined".into(),
        "notes" => "None.".into(),
        "history" => "Round 0 (baseline, v2): accuracy=0.5702".into(),
        "metric" => "accuracy=0.5702".into(),
        "feedback" => "Try an adaptive threshold.".into(),
        "term" => "R-peak".into(),
        "documents" => "[1] R wave basics (https://ecg.example.org/r-peak)\nThe R wave is the first upward deflection.".into(),
        other => panic!("no sample for placeholder {other}"),
    }
}

fn prompt_structure() -> String {
    let (problem, _) = UserProblem::load(&heartbeat("problem.toml")).unwrap();
    let verbatim = problem.render();
    let mut templates: Vec<&PromptTemplate> = vec![&TERMINOLOGY_TEMPLATE, &RELEVANCE_TEMPLATE];
    templates.extend(Stage::ALL.iter().map(|s| s.template()));
    for template in &templates {
        let bindings: Bindings<'_> = template.placeholders.iter().map(|&n| (n, sample(n, &problem))).collect();
        let text = render_prompt(template, &bindings).unwrap();
        assert!(text.contains(&verbatim), "{} lacks the user problem", template.name);
        let golden = core_path(&format!("prompts/{}.golden", template.name));
        let expected = std::fs::read_to_string(&golden).unwrap_or_else(|e| panic!("{}: {e}", golden.display()));
        assert!(text == expected, "{} differs from its golden file", template.name);
    }

    // The prompts a real session sent carry it too.
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    heartbeat_session(&store, "prompts");
    let mut dialogues = 0;
    for event in store.read_events("prompts").unwrap() {
        if let EventKind::StageArtifact { stage, artifact: Artifact::Dialogue { messages, .. } } = event.kind {
            if let Some(first) = messages.iter().find(|m| m.role == synthkit_core::llm::Role::User) {
                if first.content.starts_with("## User Problem\n") {
                    assert!(first.content.contains(&verbatim), "{stage:?} prompt lacks the user problem");
                    dialogues += 1;
                }
            }
        }
    }
    assert!(dialogues >= 20, "only {dialogues} session prompts seen");
    format!("{} templates match goldens; {dialogues} session prompts checked", templates.len())
}

fn unit(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| f64::from(*x) / norm).collect()
}

fn retrieval_exactness() -> String {
    const DIM: usize = 64;
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let vector = |rng: &mut StdRng| (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<f32>>();
    let corpus: Vec<Vec<f32>> = (0..1000).map(|_| vector(&mut rng)).collect();
    let build = |vectors: &[Vec<f32>]| {
        let mut index = KnowledgeIndex::new();
        for (i, embedding) in vectors.iter().enumerate() {
            index
                .push(KnowledgeChunk { doc_ref: format!("d{i}"), span: (0, 0), text: i.to_string(), embedding: embedding.clone() })
                .unwrap();
        }
        index
    };
    let top = |index: &KnowledgeIndex, q: &[f32], k: usize| -> Vec<usize> {
        index.search(q, k).unwrap().into_iter().map(|r| r.chunk.text.parse().unwrap()).collect()
    };
    let plain = build(&corpus);
    let scaled: Vec<Vec<f32>> = corpus
        .iter()
        .map(|v| {
            let s = rng.gen_range(0.01f32..100.0);
            v.iter().map(|x| x * s).collect()
        })
        .collect();
    let stretched = build(&scaled);
    let units: Vec<Vec<f64>> = corpus.iter().map(|v| unit(v)).collect();
    let mut mismatches = 0;
    let mut queries = 0;
    for _ in 0..50 {
        let query = vector(&mut rng);
        let q = unit(&query);
        let mut oracle: Vec<(usize, f64)> =
            units.iter().enumerate().map(|(i, u)| (i, u.iter().zip(&q).map(|(a, b)| a * b).sum())).collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for k in [1, 5, 10] {
            queries += 1;
            let want: Vec<usize> = oracle[..k].iter().map(|(i, _)| *i).collect();
            if top(&plain, &query, k) != want {
                mismatches += 1;
            }
            if top(&stretched, &query, k) != want {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0, "{mismatches} of {} rankings differ from the oracle", queries * 2);
    format!("{queries} queries x 2 scalings, 0 mismatches")
}

fn static_gate_corpus() -> String {
    let mut counts = [0usize; 2];
    for (kind, want_pass) in [("good", true), ("bad", false)] {
        let dir = core_path(&format!("fixtures/gate/{kind}"));
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_none_or(|x| x != "py") {
                continue;
            }
            let report = static_gate(&std::fs::read_to_string(&path).unwrap(), &GateConfig::default());
            assert_eq!(report.passed(), want_pass, "{}: {}", path.display(), report.describe());
            counts[usize::from(!want_pass)] += 1;
        }
    }
    assert!(counts[0] > 0 && counts[1] > 0);
    format!("{} good accepted, {} bad rejected", counts[0], counts[1])
}

fn run_source(source: &str, interpreter: &str, limits: &ExecutionLimits) -> ExecutionReport {
    let program = SynthesizedProgram {
        version: 1,
        source_text: source.into(),
        documentation: String::new(),
        origin: Origin::Integration,
        parent_version: None,
    };
    let mut problem = tiny_problem();
    problem.interpreter_command = interpreter.into();
    execute(&program, &problem, limits)
}

/// Processes whose command line carries `marker`.
fn survivors(marker: &str) -> Vec<u32> {
    std::fs::read_dir("/proc")
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().to_str()?.parse::<u32>().ok())
        .filter(|pid| {
            let cmdline = std::fs::read(format!("/proc/{pid}/cmdline")).unwrap_or_default();
            let zombie = std::fs::read_to_string(format!("/proc/{pid}/stat"))
                .is_ok_and(|s| s.rsplit(')').next().is_some_and(|rest| rest.trim_start().starts_with('Z')));
            !zombie && String::from_utf8_lossy(&cmdline).replace('\0', " ").contains(marker)
        })
        .collect()
}

fn sandbox_matrix() -> String {
    let python = "python3 {script} {input}";
    let limits = |secs: f64| ExecutionLimits { wall_timeout: Duration::from_secs_f64(secs), ..ExecutionLimits::default() };
    // Each fixture leaves a detached sleeper behind; none may outlive its run.
    let marker = "sleep 3017";
    let spawn = "import subprocess\nsubprocess.Popen(['sleep', '3017'])\n";

    let ok = run_source(&format!("{spawn}print('FINAL_METRIC: accuracy=1.0')\n"), python, &limits(20.0));
    assert_eq!((ok.status, ok.exit_code), (ExecutionStatus::Success, Some(0)));

    let bad = run_source(&format!("{spawn}import sys\nsys.exit(1)\n"), python, &limits(20.0));
    assert_eq!((bad.status, bad.exit_code), (ExecutionStatus::NonzeroExit, Some(1)));

    let timed = run_source(&format!("{spawn}import time\ntime.sleep(120)\n"), python, &limits(1.0));
    assert_eq!(timed.status, ExecutionStatus::Timeout);
    let overshoot = timed.duration_secs - 1.0;
    assert!(overshoot.abs() <= 0.5, "timeout fired after {:.3}s", timed.duration_secs);

    let cap = 64 * 1024;
    let giant = run_source(
        &format!("{spawn}import sys\nfor _ in range(4096):\n    sys.stdout.write('y' * 1024)\n"),
        python,
        &ExecutionLimits { max_output_bytes: cap, ..limits(30.0) },
    );
    assert_eq!(giant.status, ExecutionStatus::Success);
    assert!(giant.stdout_truncated && giant.stdout.len() == cap, "stdout {} bytes", giant.stdout.len());

    let missing = run_source("print(1)\n", "surely-not-an-interpreter {script} {input}", &limits(5.0));
    assert_eq!(missing.status, ExecutionStatus::LaunchFailure);

    let deadline = Instant::now() + Duration::from_secs(3);
    while !survivors(marker).is_empty() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(50));
    }
    let left = survivors(marker);
    assert!(left.is_empty(), "orphaned processes {left:?}");
    format!("5 fixtures as specified, timeout after {:.2}s, no orphans", timed.duration_secs)
}

fn traffic_accounting() -> String {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    let (backend, _) = heartbeat_session(&store, "metered");
    let state = store.load("metered").unwrap();
    // Oracle from the fixture file alone: a reply costs its record's line.
    let text = transcript();
    let records: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).collect();
    let received: u64 = records.iter().map(|l| l.len() as u64).sum();
    assert_eq!(state.traffic.bytes_received, received, "received bytes vs transcript payloads");
    assert_eq!(state.traffic.request_count, records.len() as u64, "requests vs transcript records");
    let sent: u64 = backend.wire_log().iter().map(|w| w.request.len() as u64).sum();
    assert_eq!(state.traffic.bytes_sent, sent, "sent bytes vs request bodies");
    assert!(state.traffic.is_consistent(), "per-backend totals disagree with the session totals");
    format!("{} requests, {} bytes sent, {received} bytes received", records.len(), sent)
}

struct LogBuilder {
    id: String,
    events: Vec<SessionEvent>,
    version: u32,
}

impl LogBuilder {
    fn push(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64 + 1;
        let timestamp = DateTime::from_timestamp(1_700_000_000 + seq as i64, 0).unwrap();
        self.events.push(SessionEvent { session_id: self.id.clone(), seq, timestamp, kind });
    }

    fn program(&mut self, origin: Origin, parent: Option<u32>) -> u32 {
        self.version += 1;
        let program = SynthesizedProgram {
            version: self.version,
            source_text: format!("print({})\n", self.version),
            documentation: "# Doc\n".into(),
            origin,
            parent_version: parent,
        };
        self.push(EventKind::StageArtifact { stage: StageName::Integration, artifact: Artifact::Program { program } });
        self.version
    }

    fn execute(&mut self, version: u32, metric: Option<f64>) -> ExecutionReport {
        let report = ExecutionReport {
            status: if metric.is_some() { ExecutionStatus::Success } else { ExecutionStatus::NonzeroExit },
            exit_code: Some(if metric.is_some() { 0 } else { 1 }),
            signal: None,
            stdout: metric.map(|m| format!("FINAL_METRIC: accuracy={m}\n")).unwrap_or_default(),
            stderr: String::new(),
            stdout_truncated: false,
            stderr_truncated: false,
            duration_secs: 0.5,
            command: vec![],
        };
        self.push(EventKind::ExecutionStarted { version });
        self.push(EventKind::ExecutionFinished { version, report: report.clone(), metric: metric.map(|m| Metric::new("accuracy", m)) });
        report
    }
}

/// Writes a finished session: first run crashes or not, then a baseline and
/// one metric per optimization round.
fn write_session(store: &SessionStore, id: &str, first_ok: bool, rounds: &[f64]) {
    let problem = tiny_problem();
    let mut log = LogBuilder { id: id.into(), events: vec![], version: 0 };
    log.push(EventKind::SessionCreated { problem: problem.clone(), config: SessionConfig::default() });
    let v1 = log.program(Origin::Integration, None);
    let base = if first_ok {
        log.execute(v1, Some(0.5));
        v1
    } else {
        log.execute(v1, None);
        let v2 = log.program(Origin::DebugFix, Some(v1));
        log.execute(v2, Some(0.5));
        v2
    };
    let baseline = Baseline { version: base, metric: Some(Metric::new("accuracy", 0.5)) };
    log.push(EventKind::StageArtifact { stage: StageName::Debug, artifact: Artifact::Baseline { baseline } });
    for (index, &value) in rounds.iter().enumerate() {
        let v = log.program(Origin::Optimization, Some(base));
        let report = log.execute(v, Some(value));
        log.push(EventKind::IterationDone {
            record: IterationRecord {
                index: index as u32,
                version: Some(v),
                report: Some(report),
                metric: Some(Metric::new("accuracy", value)),
                user_feedback: None,
                failure: None,
            },
        });
    }
    let mut writer = store.create(id, &problem.to_toml()).unwrap();
    for event in &log.events {
        writer.append(event).unwrap();
    }
}

fn eval_json(dir: &Path, runs: usize) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_synthkit"))
        .arg("eval")
        .arg(dir)
        .args(["--runs", &runs.to_string(), "--threshold", "0.8", "--json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "eval: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn esr_air() -> String {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    let below = [0.55, 0.6, 0.65, 0.7, 0.75];
    for i in 0..20 {
        // sessions 0, 4, 8, 12, 16 crash on their first run
        let first_ok = i % 4 != 0;
        let rounds: &[f64] = match i {
            3 => &[0.6, 0.85, 0.7, 0.9, 0.95],
            6 => &[0.6, 0.7, 0.75, 0.82, 0.9],
            _ => &below,
        };
        write_session(&store, &format!("run{i:02}"), first_ok, rounds);
    }
    let summary = eval_json(dir.path(), 20);
    assert_eq!(summary["runs"], 20);
    let esr = summary["esr"].as_f64().unwrap();
    let air = summary["air"].as_f64().expect("finite air");
    assert!((esr - 0.75).abs() < 1e-12, "esr {esr}");
    assert!((air - 3.0).abs() < 1e-12, "air {air}");

    let none = tempfile::tempdir().unwrap();
    let store = SessionStore::new(none.path());
    for i in 0..4 {
        write_session(&store, &format!("low{i}"), true, &below);
    }
    let unreached = eval_json(none.path(), 4);
    assert_eq!(unreached["air"], "inf");
    format!("esr={esr} air={air}; no-reaching set air=inf")
}

fn persistence() -> String {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path());
    let mut live = Vec::new();

    let backend = Arc::new(ScriptedBackend::from_text(&transcript()).unwrap());
    let (problem, text) = UserProblem::load(&heartbeat("problem.toml")).unwrap();
    let mut session = Session::new("finalized", problem.clone(), quick_config(), Backends::scripted(backend)).unwrap();
    session.attach_store(&store, &text).unwrap();
    session.run().unwrap();
    live.push(session.into_state());

    let mut interactive = quick_config();
    interactive.optimize.feedback_gate = synthkit_core::config::FeedbackMode::Interactive;
    let backend = Arc::new(ScriptedBackend::from_text(&transcript()).unwrap());
    let mut session = Session::new("paused", problem, interactive, Backends::scripted(backend)).unwrap();
    session.attach_store(&store, &text).unwrap();
    assert_eq!(session.run().unwrap(), Phase::AwaitingFeedback);
    live.push(session.into_state());

    let short: String = transcript().lines().take(6).collect::<Vec<_>>().join("\n");
    let backend = Arc::new(ScriptedBackend::from_text(&short).unwrap());
    let (problem, _) = UserProblem::load(&heartbeat("problem.toml")).unwrap();
    let mut session = Session::new("failed", problem, quick_config(), Backends::scripted(backend)).unwrap();
    session.attach_store(&store, &text).unwrap();
    assert!(session.run().is_err());
    live.push(session.into_state());

    let mut deletions = 0;
    for state in &live {
        let id = state.session_id.as_str();
        assert_eq!(store.load(id).unwrap(), *state, "{id}: replay differs from the live state");
        let source = store.session_dir(id);
        let log = std::fs::read_to_string(source.join("events.log")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        for k in 1..=lines.len() {
            let copy = tempfile::tempdir().unwrap();
            let damaged = SessionStore::new(copy.path());
            let target = damaged.session_dir(id);
            std::fs::create_dir_all(&target).unwrap();
            for name in ["events.head", "problem.toml"] {
                std::fs::copy(source.join(name), target.join(name)).unwrap();
            }
            let kept: String = lines.iter().enumerate().filter(|(i, _)| i + 1 != k).map(|(_, l)| format!("{l}\n")).collect();
            std::fs::write(target.join("events.log"), kept).unwrap();
            match damaged.load(id) {
                Err(StoreError::CorruptArchive { seq, .. }) => assert_eq!(seq, k as u64, "{id}: deleted seq {k}"),
                other => panic!("{id}: deleting seq {k} gave {:?}", other.map(|s| s.last_seq)),
            }
            deletions += 1;
        }
    }
    format!("{} sessions replay exactly; {deletions} single-event deletions all named", live.len())
}
