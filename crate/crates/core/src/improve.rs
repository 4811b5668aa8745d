//! Debugging, optimization iterations, best-version selection and the
//! ESR/AIR evaluation.

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::events::{Artifact, StageName};
use crate::llm::LlmError;
use crate::program::{Baseline, IterationRecord, Metric, Origin, SynthesizedProgram};
use crate::sandbox::{execute, parse_metric, ExecutionLimits, ExecutionReport};
use crate::state::SessionState;
use crate::synthesis::{
    extract_code_blocks, generate_detailed_design, generate_modules, integrate_modules, parse_outline,
    program_gate, render_prompt, AlgorithmOutline, Bindings, GateReport, RenderError, Stage, StageContext,
    SynthesisError,
};

pub use crate::config::{DebugConfig, FeedbackMode, OptimizeConfig};

/// Progress reported by the loops so the caller can record it.
#[derive(Clone, Debug, PartialEq)]
pub enum LoopEvent {
    ExecutionStarted { version: u32 },
    ExecutionFinished { version: u32, report: ExecutionReport, metric: Option<Metric> },
    Artifact { stage: StageName, artifact: Artifact },
    DebugRound { round: u32, from_version: u32, to_version: Option<u32>, feedback: Option<String> },
    /// An LLM exchange for `stage` just completed.
    StageDone(StageName),
    Warning(String),
}

/// Hands out program version numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VersionCounter(pub u32);

impl VersionCounter {
    pub fn next(&mut self) -> u32 {
        self.0 += 1;
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Debugged {
    /// The first version that executed successfully.
    pub program: SynthesizedProgram,
    /// Every execution report, in order.
    pub reports: Vec<ExecutionReport>,
    pub metric: Option<Metric>,
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("debugging gave up after {rounds} rounds; version {version} still fails")]
pub struct DebugExhausted {
    pub version: u32,
    pub rounds: u32,
    pub report: ExecutionReport,
    pub reports: Vec<ExecutionReport>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DebugError {
    #[error(transparent)]
    Exhausted(DebugExhausted),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Everything the loops need besides the stage context.
pub struct LoopSettings<'a> {
    pub limits: &'a ExecutionLimits,
    pub debug: DebugConfig,
    pub stderr_tail_bytes: usize,
}

fn run_once(
    ctx: &StageContext<'_>,
    program: &SynthesizedProgram,
    limits: &ExecutionLimits,
    observe: &mut dyn FnMut(LoopEvent),
) -> (ExecutionReport, Option<Metric>) {
    observe(LoopEvent::ExecutionStarted { version: program.version });
    let report = execute(program, ctx.problem, limits);
    let metric = match parse_metric(&report) {
        Ok(metric) => metric,
        Err(e) => {
            observe(LoopEvent::Warning(format!("version {}: {e}", program.version)));
            None
        }
    };
    observe(LoopEvent::ExecutionFinished { version: program.version, report: report.clone(), metric: metric.clone() });
    (report, metric)
}

fn debug_prompt(
    ctx: &StageContext<'_>,
    program: &SynthesizedProgram,
    log: String,
    notes: Option<&str>,
) -> Result<String, RenderError> {
    let bindings = Bindings::from([
        ("user_problem", ctx.problem.render()),
        ("source", program.source_text.trim_end().to_string()),
        ("error_log", log),
        ("notes", notes.map_or_else(|| "(none)".to_string(), str::to_string)),
    ]);
    render_prompt(Stage::Debug.template(), &bindings)
}

/// Executes `program`; while it fails, asks for a fix with the failure log
/// embedded, gates the fix and runs it as a new `DebugFix` version. At most
/// `settings.debug.max_rounds` fixes are requested.
///
/// A fix without code or failing the gate yields no version; the next round
/// shows the rejection alongside the last execution log.
pub fn debug_until_executable(
    ctx: &StageContext<'_>,
    program: SynthesizedProgram,
    settings: &LoopSettings<'_>,
    versions: &mut VersionCounter,
    feedback: Option<&str>,
    observe: &mut dyn FnMut(LoopEvent),
) -> Result<Debugged, DebugError> {
    let mut current = program;
    let (mut report, mut metric) = run_once(ctx, &current, settings.limits, observe);
    let mut reports = vec![report.clone()];
    let mut rejection: Option<String> = None;
    let mut round = 0;
    while !report.succeeded() {
        if round == settings.debug.max_rounds {
            return Err(DebugError::Exhausted(DebugExhausted { version: current.version, rounds: round, report, reports }));
        }
        round += 1;
        let mut log = report.failure_log(settings.stderr_tail_bytes);
        if let Some(note) = rejection.take() {
            log.push_str("\n\n");
            log.push_str(&note);
        }
        let prompt = debug_prompt(ctx, &current, log, feedback)?;
        let reply = ctx.llm.ask(prompt, ctx.tools)?;
        observe(LoopEvent::StageDone(StageName::Debug));

        let fix = extract_code_blocks(&reply).into_iter().find(crate::synthesis::codeblock::is_python);
        let checked = fix.map(|block| {
            let gate = program_gate(&block.code);
            (block.code, gate)
        });
        let round_event = |to_version| LoopEvent::DebugRound {
            round,
            from_version: current.version,
            to_version,
            feedback: feedback.map(str::to_string),
        };
        match checked {
            None => {
                observe(round_event(None));
                rejection = Some("Your previous fix contained no fenced ```python block.".into());
            }
            Some((_, gate)) if !gate.passed() => {
                observe(LoopEvent::Artifact {
                    stage: StageName::Debug,
                    artifact: Artifact::Gate { version: None, report: gate.clone() },
                });
                observe(round_event(None));
                rejection = Some(format!("Your previous fix failed the static check:\n{}", gate.describe()));
            }
            Some((code, _)) => {
                let fixed = SynthesizedProgram {
                    version: versions.next(),
                    source_text: code,
                    documentation: current.documentation.clone(),
                    origin: Origin::DebugFix,
                    parent_version: Some(current.version),
                };
                observe(LoopEvent::Artifact { stage: StageName::Debug, artifact: Artifact::Program { program: fixed.clone() } });
                observe(round_event(Some(fixed.version)));
                current = fixed;
                (report, metric) = run_once(ctx, &current, settings.limits, observe);
                reports.push(report.clone());
            }
        }
    }
    Ok(Debugged { program: current, reports, metric })
}

/// What an optimization iteration starts from.
pub struct IterationInput<'a> {
    pub index: u32,
    pub outline: &'a AlgorithmOutline,
    /// Summary of earlier versions and their metrics.
    pub history: String,
    /// The most recent metric, rendered.
    pub latest: String,
    pub feedback: Option<&'a str>,
}

fn or_none(text: Option<&str>) -> String {
    text.map_or_else(|| "(none)".to_string(), str::to_string)
}

/// Renders the Optimize prompt.
pub fn optimize_prompt(ctx: &StageContext<'_>, input: &IterationInput<'_>) -> Result<String, RenderError> {
    let bindings = Bindings::from([
        ("user_problem", ctx.problem.render()),
        ("outline", input.outline.render()),
        ("history", input.history.clone()),
        ("metric", input.latest.clone()),
        ("feedback", or_none(input.feedback)),
    ]);
    render_prompt(Stage::Optimize.template(), &bindings)
}

/// One recursive synthesis cycle: refined outline, design, modules,
/// integration into a new root version, then debugging. Synthesis and
/// debugging failures end up in the record; only backend errors escape.
pub fn optimize_iteration(
    ctx: &StageContext<'_>,
    input: &IterationInput<'_>,
    settings: &LoopSettings<'_>,
    versions: &mut VersionCounter,
    context: &dyn Fn(&str) -> String,
    observe: &mut dyn FnMut(LoopEvent),
) -> Result<IterationRecord, LlmError> {
    let mut record = IterationRecord {
        index: input.index,
        version: None,
        report: None,
        metric: None,
        user_feedback: input.feedback.map(str::to_string),
        failure: None,
    };
    match cycle(ctx, input, settings, versions, context, observe, &mut record) {
        Ok(()) => Ok(record),
        Err(CycleError::Llm(e)) => Err(e),
        Err(CycleError::Failed(reason)) => {
            record.failure = Some(reason);
            Ok(record)
        }
    }
}

enum CycleError {
    Llm(LlmError),
    Failed(String),
}

impl From<SynthesisError> for CycleError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Llm(e) => CycleError::Llm(e),
            other => CycleError::Failed(other.to_string()),
        }
    }
}

fn cycle(
    ctx: &StageContext<'_>,
    input: &IterationInput<'_>,
    settings: &LoopSettings<'_>,
    versions: &mut VersionCounter,
    context: &dyn Fn(&str) -> String,
    observe: &mut dyn FnMut(LoopEvent),
    record: &mut IterationRecord,
) -> Result<(), CycleError> {
    let prompt = optimize_prompt(ctx, input).map_err(SynthesisError::from)?;
    let outline = crate::synthesis::ask_with_repair(ctx.llm, ctx.tools, prompt, parse_outline, |issue| {
        crate::synthesis::format_reminder(issue)
    });
    observe(LoopEvent::StageDone(StageName::Optimize));
    let outline = outline
        .map_err(CycleError::Llm)?
        .map_err(|reason| SynthesisError::UnparseableResponse { stage: Stage::Optimize, reason })?;
    observe(LoopEvent::Artifact { stage: StageName::Optimize, artifact: Artifact::Outline { outline: outline.clone() } });

    let design = generate_detailed_design(ctx, &outline, &context(&design_query(&outline)));
    observe(LoopEvent::StageDone(StageName::DetailedDesign));
    let design = design?;
    observe(LoopEvent::Artifact { stage: StageName::DetailedDesign, artifact: Artifact::Design { design: design.clone() } });

    let modules = generate_modules(ctx, &design);
    observe(LoopEvent::StageDone(StageName::ModuleCodegen));
    for module in modules.as_deref().unwrap_or_default() {
        observe(LoopEvent::Artifact { stage: StageName::ModuleCodegen, artifact: Artifact::Module { module: module.clone() } });
    }
    let modules = modules?;

    let version = versions.0 + 1;
    let program = integrate_modules(ctx, &modules, version, Origin::Optimization, None);
    observe(LoopEvent::StageDone(StageName::Integration));
    let program = program?;
    versions.next();
    observe(LoopEvent::Artifact { stage: StageName::Integration, artifact: Artifact::Program { program: program.clone() } });

    match debug_until_executable(ctx, program, settings, versions, None, observe) {
        Ok(done) => {
            record.version = Some(done.program.version);
            record.report = done.reports.last().cloned();
            record.metric = done.metric;
            if record.metric.is_none() {
                return Err(CycleError::Failed(format!("version {} reported no metric", done.program.version)));
            }
            Ok(())
        }
        Err(DebugError::Exhausted(e)) => {
            record.version = Some(e.version);
            record.report = Some(e.report.clone());
            Err(CycleError::Failed(e.to_string()))
        }
        Err(DebugError::Llm(e)) => Err(CycleError::Llm(e)),
        Err(DebugError::Render(e)) => Err(CycleError::Failed(e.to_string())),
    }
}

/// The retrieval query used for the design stage of a cycle.
pub fn design_query(outline: &AlgorithmOutline) -> String {
    let titles: Vec<&str> = outline.steps.iter().map(|s| s.title.as_str()).collect();
    format!("detailed design {}", titles.join(" "))
}

/// Summary of earlier versions for the Optimize prompt.
pub fn render_history(baseline: Option<&Baseline>, records: &[IterationRecord]) -> String {
    let mut lines = Vec::new();
    if let Some(baseline) = baseline {
        lines.push(format!("- Version {} (initial program): {}", baseline.version, render_metric(baseline.metric.as_ref())));
    }
    for record in records {
        let outcome = match (&record.failure, record.version) {
            (Some(reason), _) => format!("failed ({})", first_line(reason)),
            (None, _) => render_metric(record.metric.as_ref()),
        };
        match record.version {
            Some(v) => lines.push(format!("- Iteration {} (version {v}): {outcome}", record.index + 1)),
            None => lines.push(format!("- Iteration {}: {outcome}", record.index + 1)),
        }
    }
    if lines.is_empty() {
        return "(none)".into();
    }
    lines.join("\n")
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}

pub fn render_metric(metric: Option<&Metric>) -> String {
    match metric {
        Some(m) => format!("{}={}", m.name, m.value),
        None => "no metric".into(),
    }
}

/// The most recent metric among the baseline and the records.
pub fn latest_metric(baseline: Option<&Baseline>, records: &[IterationRecord]) -> String {
    let latest = records
        .iter()
        .rev()
        .find_map(|r| Some((r.version?, r.metric.as_ref()?)))
        .or_else(|| baseline.and_then(|b| Some((b.version, b.metric.as_ref()?))));
    match latest {
        Some((version, metric)) => format!("{} (version {version})", render_metric(Some(metric))),
        None => "(no metric yet)".into(),
    }
}

/// The version with the highest metric among the baseline and the records;
/// ties go to the earlier version and a metric-less field leaves the baseline.
pub fn select_best(records: &[IterationRecord], baseline: &Baseline) -> u32 {
    let mut best = (baseline.version, baseline.metric.as_ref().map(|m| m.value));
    let mut candidates: Vec<(u32, f64)> = records
        .iter()
        .filter_map(|r| Some((r.version?, r.metric.as_ref()?.value)))
        .filter(|(_, v)| !v.is_nan())
        .collect();
    candidates.sort_by_key(|(version, _)| *version);
    for (version, value) in candidates {
        let better = match best.1 {
            None => true,
            Some(current) => value > current || (value == current && version < best.0),
        };
        if better {
            best = (version, Some(value));
        }
    }
    best.0
}

/// Upper bound on chat completions a session can make. Every prompt is sent
/// at most twice (one repair), every send may take `tool_rounds` extra
/// round trips, and each debug round is a single prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CallBound {
    pub terminologies: u64,
    /// Largest number of design subtasks in any cycle.
    pub subtasks: u64,
    pub tool_rounds: u64,
    pub max_debug_rounds: u64,
    pub iterations: u64,
}

impl CallBound {
    pub fn total(&self) -> u64 {
        let per_prompt = 2 * (self.tool_rounds + 1);
        let debug = self.max_debug_rounds * (self.tool_rounds + 1);
        let retrieval = per_prompt * (1 + self.terminologies);
        // outline (or optimize) + design + modules + integration, then debugging
        let cycle = per_prompt * (3 + self.subtasks) + debug;
        // an interactive retry after exhaustion repeats debugging; not counted
        retrieval + cycle * (1 + self.iterations)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no session logs to evaluate")]
pub struct EmptyInput;

fn serialize_air<S: Serializer>(air: &f64, s: S) -> Result<S::Ok, S::Error> {
    if air.is_finite() {
        s.serialize_f64(*air)
    } else {
        s.serialize_str("inf")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub esr: f64,
    /// Infinite when no session reaches the threshold.
    #[serde(serialize_with = "serialize_air")]
    pub air: f64,
    pub runs: usize,
    pub threshold: f64,
    /// Sessions that reached the threshold; AIR averages over these.
    pub reaching: usize,
}

/// Round at which a session first reaches `threshold`: 0 for the baseline,
/// `i + 1` for iteration record `i`.
pub fn rounds_to_threshold(state: &SessionState, threshold: f64) -> Option<u32> {
    if state.baseline.as_ref().and_then(|b| b.metric.as_ref()).is_some_and(|m| m.value >= threshold) {
        return Some(0);
    }
    state
        .iterations
        .iter()
        .find(|r| r.metric.as_ref().is_some_and(|m| m.value >= threshold))
        .map(|r| r.index + 1)
}

pub fn compute_esr_air(states: &[SessionState], threshold: f64) -> Result<EvalSummary, EmptyInput> {
    if states.is_empty() {
        return Err(EmptyInput);
    }
    let successes = states.iter().filter(|s| s.first_run_succeeded()).count();
    let rounds: Vec<u32> = states.iter().filter_map(|s| rounds_to_threshold(s, threshold)).collect();
    let air = if rounds.is_empty() {
        f64::INFINITY
    } else {
        rounds.iter().map(|&r| f64::from(r)).sum::<f64>() / rounds.len() as f64
    };
    Ok(EvalSummary {
        esr: successes as f64 / states.len() as f64,
        air,
        runs: states.len(),
        threshold,
        reaching: rounds.len(),
    })
}

/// Gate report of a rejected debug fix, if the events carry one.
pub fn rejected_fixes(state: &SessionState) -> impl Iterator<Item = &GateReport> {
    state.gate_reports.iter().filter(|(v, _)| v.is_none()).map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Llm, ScriptedBackend, ToolRegistry};
    use crate::problem::UserProblem;
    use crate::sandbox::ExecutionStatus;
    use serde_json::json;
    use std::sync::Arc;
    use std::time::Duration;

    fn metric(v: f64) -> Option<Metric> {
        Some(Metric::new("accuracy", v))
    }

    fn record(index: u32, version: Option<u32>, value: Option<f64>) -> IterationRecord {
        IterationRecord {
            index,
            version,
            report: None,
            metric: value.and_then(metric),
            user_feedback: None,
            failure: None,
        }
    }

    #[test]
    fn select_best_argmax() {
        let baseline = Baseline { version: 1, metric: metric(0.6) };
        let records = [record(0, Some(2), Some(0.7)), record(1, Some(3), Some(0.9)), record(2, Some(4), Some(0.85))];
        assert_eq!(select_best(&records, &baseline), 3);
    }

    #[test]
    fn select_best_tie_goes_to_earlier() {
        let baseline = Baseline { version: 1, metric: metric(0.6) };
        let records = [record(0, Some(5), Some(0.9)), record(1, Some(3), Some(0.9))];
        assert_eq!(select_best(&records, &baseline), 3);
        let baseline = Baseline { version: 1, metric: metric(0.9) };
        assert_eq!(select_best(&records, &baseline), 1);
    }

    #[test]
    fn select_best_falls_back_to_baseline() {
        let baseline = Baseline { version: 1, metric: metric(0.6) };
        let records = [record(0, None, None), record(1, Some(4), None)];
        assert_eq!(select_best(&records, &baseline), 1);
    }

    #[test]
    fn select_best_is_invariant_under_monotone_maps() {
        use proptest::prelude::*;
        proptest!(|(values in proptest::collection::vec(0.0f64..1.0, 0..8), base in 0.0f64..1.0, scale in 0.1f64..10.0)| {
            let records: Vec<_> = values.iter().enumerate().map(|(i, v)| record(i as u32, Some(i as u32 + 2), Some(*v))).collect();
            let baseline = Baseline { version: 1, metric: metric(base) };
            let mapped: Vec<_> = values.iter().enumerate().map(|(i, v)| record(i as u32, Some(i as u32 + 2), Some((v * scale).exp()))).collect();
            let mapped_base = Baseline { version: 1, metric: metric((base * scale).exp()) };
            prop_assert_eq!(select_best(&records, &baseline), select_best(&mapped, &mapped_base));
        });
    }

    fn problem() -> UserProblem {
        UserProblem::parse("target = \"t\"\ninterpreter_command = \"python3 {script} {input}\"").unwrap()
    }

    fn program(source: &str) -> SynthesizedProgram {
        SynthesizedProgram {
            version: 1,
            source_text: source.into(),
            documentation: "# docs".into(),
            origin: Origin::Integration,
            parent_version: None,
        }
    }

    fn scripted(records: &[serde_json::Value]) -> (Llm, Arc<ScriptedBackend>) {
        let text: String = records.iter().map(|r| r.to_string() + "\n").collect();
        let backend = Arc::new(ScriptedBackend::from_text(&text).unwrap());
        (Llm::new(backend.clone()), backend)
    }

    fn settings(limits: &ExecutionLimits, rounds: u32) -> LoopSettings<'_> {
        LoopSettings { limits, debug: DebugConfig { max_rounds: rounds }, stderr_tail_bytes: 16 * 1024 }
    }

    fn fix(code: &str) -> String {
        format!("```python\n{code}\n```")
    }

    #[test]
    fn immediate_success_needs_no_rounds() {
        let (llm, backend) = scripted(&[]);
        let tools = ToolRegistry::new();
        let problem = problem();
        let ctx = StageContext { problem: &problem, llm: &llm, tools: &tools };
        let limits = ExecutionLimits::default();
        let mut versions = VersionCounter(1);
        let mut events = Vec::new();
        let done = debug_until_executable(
            &ctx,
            program("print('FINAL_METRIC: accuracy=0.5')"),
            &settings(&limits, 3),
            &mut versions,
            None,
            &mut |e| events.push(e),
        )
        .unwrap();
        assert_eq!(done.program.version, 1);
        assert_eq!(done.reports.len(), 1);
        assert_eq!(done.metric, metric(0.5));
        assert_eq!(backend.consumed(), (0, 0));
    }

    #[test]
    fn buggy_then_fixed() {
        let (llm, _) = scripted(&[json!({
            "match": "NameError",
            "reply": fix("print('FINAL_METRIC: accuracy=0.8')")
        })]);
        let tools = ToolRegistry::new();
        let problem = problem();
        let ctx = StageContext { problem: &problem, llm: &llm, tools: &tools };
        let limits = ExecutionLimits::default();
        let mut versions = VersionCounter(1);
        let mut events = Vec::new();
        let done = debug_until_executable(
            &ctx,
            program("print(undefined_name)"),
            &settings(&limits, 3),
            &mut versions,
            None,
            &mut |e| events.push(e),
        )
        .unwrap();
        assert_eq!(done.program.version, 2);
        assert_eq!(done.program.origin, Origin::DebugFix);
        assert_eq!(done.program.parent_version, Some(1));
        assert_eq!(done.reports.len(), 2);
        assert_eq!(done.reports[0].status, ExecutionStatus::NonzeroExit);
        assert!(done.reports[1].succeeded());
        assert!(events.contains(&LoopEvent::DebugRound { round: 1, from_version: 1, to_version: Some(2), feedback: None }));
    }

    #[test]
    fn never_fixing_exhausts_after_max_rounds() {
        let still_broken = fix("import sys\nsys.exit(3)");
        let records: Vec<_> = (0..3).map(|_| json!({"match": "failed when executed", "reply": still_broken})).collect();
        let (llm, backend) = scripted(&records);
        let tools = ToolRegistry::new();
        let problem = problem();
        let ctx = StageContext { problem: &problem, llm: &llm, tools: &tools };
        let limits = ExecutionLimits::default();
        let mut versions = VersionCounter(1);
        let mut executions = 0;
        let err = debug_until_executable(
            &ctx,
            program("import sys\nsys.exit(1)"),
            &settings(&limits, 3),
            &mut versions,
            None,
            &mut |e| {
                if matches!(e, LoopEvent::ExecutionStarted { .. }) {
                    executions += 1;
                }
            },
        )
        .unwrap_err();
        let DebugError::Exhausted(exhausted) = err else { panic!("expected exhaustion") };
        assert_eq!(exhausted.rounds, 3);
        assert_eq!(exhausted.reports.len(), 4);
        assert_eq!(executions, 4);
        assert_eq!(backend.consumed().0, 3);
        assert_eq!(exhausted.version, 4);
    }

    #[test]
    fn gate_rejected_fix_creates_no_version() {
        let (llm, _) = scripted(&[
            json!({"match": "failed when executed", "reply": fix("def f():\n    pass\nf()")}),
            json!({"match": "failed the static check", "reply": fix("print('FINAL_METRIC: accuracy=1.0')")}),
        ]);
        let tools = ToolRegistry::new();
        let problem = problem();
        let ctx = StageContext { problem: &problem, llm: &llm, tools: &tools };
        let limits = ExecutionLimits::default();
        let mut versions = VersionCounter(1);
        let mut events = Vec::new();
        let done = debug_until_executable(
            &ctx,
            program("import sys\nsys.exit(1)"),
            &settings(&limits, 3),
            &mut versions,
            None,
            &mut |e| events.push(e),
        )
        .unwrap();
        assert_eq!(done.program.version, 2);
        assert_eq!(done.reports.len(), 2);
        assert!(events.contains(&LoopEvent::DebugRound { round: 1, from_version: 1, to_version: None, feedback: None }));
    }

    #[test]
    fn timeout_is_debugged_like_any_failure() {
        let (llm, _) = scripted(&[json!({"match": "time limit", "reply": fix("print('FINAL_METRIC: accuracy=1')")})]);
        let tools = ToolRegistry::new();
        let problem = problem();
        let ctx = StageContext { problem: &problem, llm: &llm, tools: &tools };
        let limits = ExecutionLimits { wall_timeout: Duration::from_millis(300), ..ExecutionLimits::default() };
        let mut versions = VersionCounter(1);
        let done = debug_until_executable(
            &ctx,
            program("import time\ntime.sleep(5)"),
            &settings(&limits, 1),
            &mut versions,
            None,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(done.reports[0].status, ExecutionStatus::Timeout);
        assert_eq!(done.program.version, 2);
    }

    #[test]
    fn history_and_latest_metric() {
        let baseline = Baseline { version: 1, metric: metric(0.7) };
        let mut failed = record(1, None, None);
        failed.failure = Some("the integration reply has no Markdown documentation block".into());
        let records = [record(0, Some(3), Some(0.85)), failed];
        let history = render_history(Some(&baseline), &records);
        assert!(history.contains("Version 1 (initial program): accuracy=0.7"));
        assert!(history.contains("Iteration 1 (version 3): accuracy=0.85"));
        assert!(history.contains("Iteration 2: failed"));
        assert_eq!(latest_metric(Some(&baseline), &records), "accuracy=0.85 (version 3)");
        assert_eq!(latest_metric(None, &[]), "(no metric yet)");
    }

    #[test]
    fn call_bound_formula() {
        let bound = CallBound { terminologies: 3, subtasks: 5, tool_rounds: 0, max_debug_rounds: 5, iterations: 5 };
        // retrieval 2 * 4, each cycle 2 * 8 + 5, six cycles
        assert_eq!(bound.total(), 8 + 6 * 21);
    }
}
