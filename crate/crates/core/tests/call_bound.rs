mod common;

use std::sync::Arc;

use serde_json::json;
use synthkit_core::improve::CallBound;
use synthkit_core::llm::{Channel, ScriptedBackend};
use synthkit_core::{Backends, Phase, Session, UserProblem};

fn chat_calls(backend: &ScriptedBackend) -> u64 {
    backend.wire_log().iter().filter(|w| w.channel == Channel::Chat).count() as u64
}

#[test]
fn heartbeat_session_stays_under_the_bound() {
    let (ran, phase) = common::run_heartbeat("bounded");
    assert_eq!(phase, Phase::Finalized);
    let state = ran.store.load("bounded").unwrap();
    let config = state.config.as_ref().unwrap();
    let bound = CallBound {
        terminologies: state.terminologies.len() as u64,
        subtasks: 8,
        tool_rounds: u64::from(config.max_tool_rounds),
        max_debug_rounds: u64::from(config.debug.max_rounds),
        iterations: u64::from(config.optimize.iterations),
    };
    let scripted = common::heartbeat_transcript()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.contains(r#""channel": "search""#))
        .count() as u64;
    assert_eq!(chat_calls(&ran.backend), scripted);
    assert!(chat_calls(&ran.backend) <= bound.total());
}

/// Every prompt needs its one repair and debugging uses every round.
#[test]
fn fully_repaired_failing_session_stays_under_the_bound() {
    let anything = "(?s).";
    let crash = "```python\ndef compute():\n    return 1 / 0\n\n\ndef report(value):\n    print(value)\n\n\n\
report(compute())\n```";
    let design = "### Step 1: Compute\nFunction: compute\nActions:\n- divide\nIO: () -> float\n\n\
### Step 2: Report\nFunction: report\nActions:\n- print\nIO: float -> None";
    let mut lines = vec![
        json!({"match": "Identify the key terminologies", "reply": "I think arithmetic matters."}),
        json!({"pattern": anything, "reply": "TERMINOLOGIES: arithmetic"}),
        json!({"channel": "search", "unavailable": true}),
        json!({"match": "preliminary algorithm outline", "reply": "First compute, then report."}),
        json!({"pattern": anything, "reply": "1. Compute: divide.\n2. Report: print."}),
        json!({"match": "Elaborate on each step", "reply": "### Step 1: Compute\nActions:\n- divide\nIO: x"}),
        json!({"pattern": anything, "reply": design}),
        json!({"match": "Write the Python function `compute`", "reply": "Here you go: return 1 / 0"}),
        json!({"pattern": anything, "reply": "```python\ndef compute():\n    return 1 / 0\n```"}),
        json!({"match": "Write the Python function `report`", "reply": "```python\ndef report(value):\n    pass\n```"}),
        json!({"pattern": anything, "reply": "```python\ndef report(value):\n    print(value)\n```"}),
        json!({"match": "Integrate the code segments", "reply": crash}),
        json!({"pattern": anything, "reply": format!("{crash}\n\n````markdown\n# Docs\n````")}),
    ];
    for _ in 0..3 {
        lines.push(json!({"match": "failed when executed", "reply": crash}));
    }
    let text = lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n");
    let backend = Arc::new(ScriptedBackend::from_text(&text).unwrap());
    let problem = UserProblem::parse("target = \"Print.\"\ninterpreter_command = \"python3 {script} {input}\"\n").unwrap();
    let mut config = common::quick_config();
    config.debug.max_rounds = 3;
    config.optimize.iterations = 1;
    config.max_tool_rounds = 0;
    let mut session = Session::new("worst", problem, config, Backends::scripted(backend.clone())).unwrap();
    assert_eq!(session.run().unwrap(), Phase::Failed);
    assert_eq!(backend.remaining_chat(), 0);
    let calls = chat_calls(&backend);
    assert_eq!(calls, 15);
    let bound = CallBound { terminologies: 1, subtasks: 2, tool_rounds: 0, max_debug_rounds: 3, iterations: 1 };
    assert!(calls <= bound.total(), "{calls} > {}", bound.total());
}
