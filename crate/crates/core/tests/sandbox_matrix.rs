use std::time::{Duration, Instant};

use synthkit_core::sandbox::{execute, parse_metric, ExecutionLimits, ExecutionReport, ExecutionStatus};
use synthkit_core::{Metric, Origin, SynthesizedProgram, UserProblem};

fn problem(interpreter: &str) -> UserProblem {
    UserProblem {
        target: "t".into(),
        remarks: String::new(),
        input_spec: String::new(),
        output_spec: String::new(),
        dataset_path: None,
        interpreter_command: interpreter.into(),
    }
}

fn run_with(source: &str, limits: &ExecutionLimits) -> ExecutionReport {
    let program = SynthesizedProgram {
        version: 1,
        source_text: source.into(),
        documentation: String::new(),
        origin: Origin::Integration,
        parent_version: None,
    };
    execute(&program, &problem("python3 {script} {input}"), limits)
}

fn limits(timeout: Duration) -> ExecutionLimits {
    ExecutionLimits { wall_timeout: timeout, ..ExecutionLimits::default() }
}

fn alive(pid: i32) -> bool {
    // A zombie still answers kill(0); /proc tells them apart.
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => !stat.split_whitespace().nth(2).is_some_and(|s| s == "Z"),
        Err(_) => false,
    }
}

fn gone_within(pid: i32, wait: Duration) -> bool {
    let deadline = Instant::now() + wait;
    while Instant::now() < deadline {
        if !alive(pid) {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    !alive(pid)
}

#[test]
fn clean_exit_with_metric() {
    let report = run_with("print('warming up')\nprint('FINAL_METRIC: accuracy=0.93')\n", &limits(Duration::from_secs(20)));
    assert_eq!(report.status, ExecutionStatus::Success);
    assert_eq!(report.exit_code, Some(0));
    assert_eq!(parse_metric(&report).unwrap(), Some(Metric::new("accuracy", 0.93)));
}

#[test]
fn nonzero_exit_keeps_stderr() {
    let report = run_with("import sys\nsys.stderr.write('bad input\\n')\nsys.exit(3)\n", &limits(Duration::from_secs(20)));
    assert_eq!(report.status, ExecutionStatus::NonzeroExit);
    assert_eq!(report.exit_code, Some(3));
    assert_eq!(report.stderr, "bad input\n");
    assert_eq!(parse_metric(&report).unwrap(), None);
}

#[test]
fn timeout_is_enforced_within_half_a_second() {
    let started = Instant::now();
    let report = run_with("import time\nprint('FINAL_METRIC: x=1', flush=True)\ntime.sleep(60)\n", &limits(Duration::from_secs(1)));
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(report.status, ExecutionStatus::Timeout);
    assert_eq!(report.exit_code, None);
    assert!((report.duration_secs - 1.0).abs() <= 0.5, "{}", report.duration_secs);
    assert!(elapsed < 1.5 + 1.0, "{elapsed}");
    // Output before the kill is kept, but a timed-out run has no metric.
    assert!(report.stdout.contains("FINAL_METRIC"));
    assert_eq!(parse_metric(&report).unwrap(), None);
}

#[test]
fn giant_output_is_truncated_at_the_cap() {
    let limits = ExecutionLimits { max_output_bytes: 64 * 1024, ..limits(Duration::from_secs(30)) };
    let report = run_with("import sys\nfor _ in range(2000):\n    sys.stdout.write('x' * 4096)\n", &limits);
    assert_eq!(report.status, ExecutionStatus::Success);
    assert!(report.stdout_truncated);
    assert_eq!(report.stdout.len(), 64 * 1024);
    assert!(!report.stderr_truncated);
}

#[test]
fn missing_interpreter_is_a_launch_failure() {
    let program = SynthesizedProgram {
        version: 2,
        source_text: "print(1)".into(),
        documentation: String::new(),
        origin: Origin::Integration,
        parent_version: None,
    };
    let report = execute(&program, &problem("no-such-interpreter-xyz {script} {input}"), &limits(Duration::from_secs(5)));
    assert_eq!(report.status, ExecutionStatus::LaunchFailure);
    assert!(report.stderr.contains("no-such-interpreter-xyz"), "{}", report.stderr);
}

#[test]
fn death_by_signal_is_reported() {
    let report = run_with("import os, signal\nos.kill(os.getpid(), signal.SIGKILL)\n", &limits(Duration::from_secs(20)));
    assert_eq!(report.status, ExecutionStatus::NonzeroExit);
    assert_eq!(report.signal, Some(9));
    assert_eq!(report.exit_code, None);
}

#[test]
fn binary_garbage_is_captured_lossily() {
    let report = run_with(
        "import sys\nsys.stdout.buffer.write(bytes(range(256)) * 64)\nsys.stderr.buffer.write(b'\\xff\\xfe\\x00oops')\n",
        &limits(Duration::from_secs(20)),
    );
    assert_eq!(report.status, ExecutionStatus::Success);
    assert!(report.stdout.contains('\u{fffd}'));
    assert!(report.stderr.ends_with("oops"));
    assert!(parse_metric(&report).is_ok());
}

#[test]
fn no_process_survives_a_finished_run() {
    let source = "import subprocess\np = subprocess.Popen(['sleep', '300'])\nprint(p.pid, flush=True)\n";
    let report = run_with(source, &limits(Duration::from_secs(20)));
    assert_eq!(report.status, ExecutionStatus::Success);
    let pid: i32 = report.stdout.trim().parse().unwrap();
    assert!(gone_within(pid, Duration::from_secs(3)), "background child {pid} outlived the run");
}

#[test]
fn no_process_survives_a_timeout() {
    let source = "import subprocess, time\np = subprocess.Popen(['sleep', '300'])\nprint(p.pid, flush=True)\ntime.sleep(60)\n";
    let report = run_with(source, &limits(Duration::from_millis(800)));
    assert_eq!(report.status, ExecutionStatus::Timeout);
    let pid: i32 = report.stdout.trim().parse().unwrap();
    assert!(gone_within(pid, Duration::from_secs(3)), "background child {pid} outlived the timeout");
}

#[test]
fn environment_is_scrubbed() {
    std::env::set_var("SYNTHKIT_LLM_API_KEY", "secret-value");
    let report = run_with("import os\nprint(os.environ.get('SYNTHKIT_LLM_API_KEY', 'absent'))\n", &limits(Duration::from_secs(20)));
    assert_eq!(report.stdout.trim(), "absent");
}
