//! The four synthesis stages.

use serde::{Deserialize, Serialize};

use super::codeblock::{extract_code_blocks, is_markdown, is_python};
use super::gate::{scan_python, static_gate, GateConfig, GateReport};
use super::parse::{merge_design, parse_design, parse_outline, validate_design, AlgorithmOutline, DesignProblem, DetailedDesign, Subtask};
use super::template::{render_prompt, Bindings, Stage};
use super::{ask_with_repair, format_reminder, SynthesisError};
use crate::llm::{Llm, ToolRegistry};
use crate::problem::UserProblem;
use crate::program::{Origin, SynthesizedProgram};

/// Programs must fit a single event line of the session log.
pub const MAX_PROGRAM_BYTES: usize = 40 * 1024;

pub struct StageContext<'a> {
    pub problem: &'a UserProblem,
    pub llm: &'a Llm,
    pub tools: &'a ToolRegistry,
}

impl StageContext<'_> {
    fn bindings(&self) -> Bindings<'static> {
        Bindings::from([("user_problem", self.problem.render())])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeModule {
    pub subtask_label: String,
    pub function_name: String,
    pub code: String,
    /// Root package names imported by the code.
    pub imports: Vec<String>,
}

pub fn generate_outline(ctx: &StageContext<'_>, context: &str) -> Result<AlgorithmOutline, SynthesisError> {
    let mut bindings = ctx.bindings();
    bindings.insert("context", context.to_string());
    let prompt = render_prompt(Stage::Outline.template(), &bindings)?;
    ask_with_repair(ctx.llm, ctx.tools, prompt, parse_outline, |issue| format_reminder(issue))?
        .map_err(|reason| SynthesisError::UnparseableResponse { stage: Stage::Outline, reason })
}

fn coverage_reprompt(missing: &[usize], outline: &AlgorithmOutline) -> String {
    let steps: Vec<String> = missing
        .iter()
        .map(|&n| format!("step {n} ({})", outline.steps[n - 1].title))
        .collect();
    format!(
        "The detailed design has no subtask for {}. Reply with the subtasks for the missing steps only, \
         using the same response format.",
        steps.join(", ")
    )
}

pub fn generate_detailed_design(
    ctx: &StageContext<'_>,
    outline: &AlgorithmOutline,
    context: &str,
) -> Result<DetailedDesign, SynthesisError> {
    if outline.steps.is_empty() {
        return Err(SynthesisError::EmptyOutline);
    }
    let mut bindings = ctx.bindings();
    bindings.insert("outline", outline.render());
    bindings.insert("context", context.to_string());
    let prompt = render_prompt(Stage::DetailedDesign.template(), &bindings)?;

    let n = outline.steps.len();
    let mut partial: Option<DetailedDesign> = None;
    let parse = |reply: &str| -> Result<DetailedDesign, (DesignProblem, Option<DetailedDesign>)> {
        let parsed = parse_design(reply).map_err(|e| (DesignProblem::Unparseable(e), None))?;
        let design = match partial.take() {
            Some(base) => merge_design(&base, &parsed, n),
            None => parsed,
        };
        match validate_design(&design, outline) {
            Ok(()) => Ok(design),
            Err(problem @ DesignProblem::CoverageGap(_)) => {
                partial = Some(design.clone());
                Err((problem, Some(design)))
            }
            Err(problem) => Err((problem, None)),
        }
    };
    let reprompt = |(problem, _): &(DesignProblem, Option<DetailedDesign>)| match problem {
        DesignProblem::Unparseable(issue) => format_reminder(issue),
        DesignProblem::CoverageGap(missing) => coverage_reprompt(missing, outline),
    };
    ask_with_repair(ctx.llm, ctx.tools, prompt, parse, reprompt)?.map_err(|(problem, _)| match problem {
        DesignProblem::Unparseable(reason) => SynthesisError::UnparseableResponse { stage: Stage::DetailedDesign, reason },
        DesignProblem::CoverageGap(missing) => SynthesisError::CoverageGap { missing },
    })
}

const NO_CODE_REPROMPT: &str = "Your previous reply did not contain a fenced code block. \
Reply with the complete code in one fenced ```python block.";

fn gate_reprompt(report: &GateReport) -> String {
    format!(
        "The code failed the static check:\n{}\nFix these problems and reply with the complete corrected code \
         in one fenced ```python block.",
        report.describe()
    )
}

/// Gate for a single design function: the usual checks, with every design
/// function name treated as defined, plus exactly one top-level definition
/// of the requested function.
pub fn module_gate(code: &str, function_name: &str, design_functions: &[String]) -> GateReport {
    let config = GateConfig { max_source_bytes: Some(MAX_PROGRAM_BYTES), ..GateConfig::default() }
        .with_known(design_functions.iter().cloned());
    let mut report = static_gate(code, &config);
    let defined = scan_python(code).top_level_functions.iter().filter(|f| *f == function_name).count();
    if defined != 1 {
        report.add_diagnostic(format!(
            "expected exactly one top-level definition of `{function_name}`, found {defined}"
        ));
    }
    report
}

pub fn generate_module_code(
    ctx: &StageContext<'_>,
    subtask: &Subtask,
    design: &DetailedDesign,
) -> Result<CodeModule, SynthesisError> {
    let mut bindings = ctx.bindings();
    bindings.insert("design", design.render());
    bindings.insert("subtask", subtask.render());
    bindings.insert("function_name", subtask.function_name.clone());
    let prompt = render_prompt(Stage::ModuleCodegen.template(), &bindings)?;
    let known = design.function_names();

    let parse = |reply: &str| -> Result<String, SynthesisError> {
        let block = extract_code_blocks(reply)
            .into_iter()
            .next()
            .ok_or(SynthesisError::NoCodeBlock { stage: Stage::ModuleCodegen })?;
        let report = module_gate(&block.code, &subtask.function_name, &known);
        if report.passed() {
            Ok(block.code)
        } else {
            Err(SynthesisError::GateFailed { stage: Stage::ModuleCodegen, report })
        }
    };
    let reprompt = |error: &SynthesisError| match error {
        SynthesisError::GateFailed { report, .. } => gate_reprompt(report),
        _ => NO_CODE_REPROMPT.to_string(),
    };
    let code = ask_with_repair(ctx.llm, ctx.tools, prompt, parse, reprompt)??;
    Ok(CodeModule {
        subtask_label: subtask.label.clone(),
        imports: scan_python(&code).imports,
        function_name: subtask.function_name.clone(),
        code,
    })
}

/// Generates every design function in order. Each gets its own conversation
/// seeded with the shared design.
pub fn generate_modules(ctx: &StageContext<'_>, design: &DetailedDesign) -> Result<Vec<CodeModule>, SynthesisError> {
    design.subtasks.iter().map(|s| generate_module_code(ctx, s, design)).collect()
}

fn render_modules(modules: &[CodeModule]) -> String {
    modules
        .iter()
        .map(|m| format!("### `{}` (step {})\n```python\n{}```", m.function_name, m.subtask_label, m.code))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn program_gate(code: &str) -> GateReport {
    static_gate(code, &GateConfig { max_source_bytes: Some(MAX_PROGRAM_BYTES), ..GateConfig::default() })
}

struct IntegrationIssues {
    error: SynthesisError,
    issues: Vec<String>,
}

fn parse_integration(reply: &str) -> Result<(String, String), IntegrationIssues> {
    let blocks = extract_code_blocks(reply);
    let code = blocks.iter().find(|b| is_python(b)).map(|b| b.code.clone());
    let docs = blocks.iter().find(|b| is_markdown(b)).map(|b| b.code.trim().to_string()).filter(|d| !d.is_empty());
    let report = code.as_deref().map(program_gate);

    let mut issues = Vec::new();
    if code.is_none() {
        issues.push("The reply has no fenced ```python block with the program.".to_string());
    }
    if docs.is_none() {
        issues.push("The reply has no non-empty documentation block fenced with ````markdown.".to_string());
    }
    if let Some(report) = report.as_ref().filter(|r| !r.passed()) {
        issues.push(format!("The program failed the static check:\n{}", report.describe()));
    }
    let error = match (code, docs, report) {
        (None, _, _) => SynthesisError::NoCodeBlock { stage: Stage::Integration },
        (_, None, _) => SynthesisError::MissingDocumentation,
        (Some(_), Some(_), Some(report)) if !report.passed() => {
            SynthesisError::GateFailed { stage: Stage::Integration, report }
        }
        (Some(code), Some(docs), _) => return Ok((code, docs)),
    };
    Err(IntegrationIssues { error, issues })
}

/// Integrates the modules into one program. The result carries `version`,
/// `origin` and `parent_version` as given.
pub fn integrate_modules(
    ctx: &StageContext<'_>,
    modules: &[CodeModule],
    version: u32,
    origin: Origin,
    parent_version: Option<u32>,
) -> Result<SynthesizedProgram, SynthesisError> {
    let mut bindings = ctx.bindings();
    bindings.insert("modules", render_modules(modules));
    bindings.insert("interpreter_command", ctx.problem.interpreter_command.clone());
    let prompt = render_prompt(Stage::Integration.template(), &bindings)?;
    let reprompt = |found: &IntegrationIssues| {
        format!(
            "The integration reply has problems:\n- {}\nReply again with the complete program in a ```python block \
             followed by the documentation in a ````markdown block.",
            found.issues.join("\n- ")
        )
    };
    let (source_text, documentation) =
        ask_with_repair(ctx.llm, ctx.tools, prompt, parse_integration, reprompt)?.map_err(|found| found.error)?;
    Ok(SynthesizedProgram { version, source_text, documentation, origin, parent_version })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use crate::synthesis::parse::OutlineStep;
    use serde_json::json;
    use std::sync::Arc;

    fn problem() -> UserProblem {
        UserProblem::parse(
            r#"
target = "Detect heartbeats in ECG recordings."
output_spec = "Print the detection accuracy."
interpreter_command = "python3 {script} -i {input}"
"#,
        )
        .unwrap()
    }

    fn transcript(records: &[serde_json::Value]) -> (Llm, Arc<ScriptedBackend>) {
        let text: String = records.iter().map(|r| r.to_string() + "\n").collect();
        let backend = Arc::new(ScriptedBackend::from_text(&text).unwrap());
        (Llm::new(backend.clone()), backend)
    }

    fn with_ctx<T>(llm: &Llm, tools: &ToolRegistry, f: impl FnOnce(&StageContext<'_>) -> T) -> T {
        let problem = problem();
        f(&StageContext { problem: &problem, llm, tools })
    }

    const FIVE_STEPS: &str = "1. Load: read records\n2. Filter: band-pass\n3. Detect: find R-peaks\n4. Evaluate: compare\n5. Report: print accuracy";

    fn outline(n: usize) -> AlgorithmOutline {
        AlgorithmOutline {
            steps: (1..=n).map(|i| OutlineStep { title: format!("Step{i}"), summary: String::new() }).collect(),
        }
    }

    fn design_block(step: usize, name: &str) -> String {
        format!("### Step {step}: do {name}\nFunction: {name}\nActions:\n- act\nIO: x -> y\n")
    }

    #[test]
    fn outline_keeps_order() {
        let (llm, _) = transcript(&[json!({"match": "preliminary algorithm outline", "reply": FIVE_STEPS})]);
        let outline = with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_outline(ctx, "ctx")).unwrap();
        let titles: Vec<_> = outline.steps.iter().map(|s| s.title.as_str()).collect();
        assert_eq!(titles, ["Load", "Filter", "Detect", "Evaluate", "Report"]);
    }

    #[test]
    fn one_step_outline_fails_after_reprompt() {
        let (llm, backend) = transcript(&[
            json!({"match": "preliminary algorithm outline", "reply": "1. Everything: do it"}),
            json!({"match": "did not follow the response format", "reply": "1. Everything: still"}),
        ]);
        let err = with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_outline(ctx, "")).unwrap_err();
        assert!(matches!(err, SynthesisError::UnparseableResponse { stage: Stage::Outline, .. }));
        assert_eq!(backend.remaining_chat(), 0);
    }

    #[test]
    fn outline_after_a_tool_round() {
        let (llm, _) = transcript(&[
            json!({"match": "preliminary algorithm outline", "tool_call": {"name": "web_search", "arguments": "Pan-Tompkins"}}),
            json!({"reply": FIVE_STEPS}),
        ]);
        let mut tools = ToolRegistry::new();
        tools.register("web_search", "Searches the web.", |q| Ok(format!("results for {q}"))).unwrap();
        let outline = with_ctx(&llm, &tools, |ctx| generate_outline(ctx, "")).unwrap();
        assert_eq!(outline.steps.len(), 5);
    }

    #[test]
    fn design_full_coverage() {
        let reply: String = (1..=5).map(|i| design_block(i, &format!("f{i}"))).collect();
        let (llm, _) = transcript(&[json!({"match": "Elaborate on each step", "reply": reply})]);
        let design = with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_detailed_design(ctx, &outline(5), "")).unwrap();
        assert_eq!(design.subtasks.len(), 5);
    }

    #[test]
    fn design_gap_reprompts_naming_the_step() {
        let first: String = [1, 2, 4, 5].iter().map(|&i| design_block(i, &format!("f{i}"))).collect();
        let (llm, _) = transcript(&[
            json!({"match": "Elaborate on each step", "reply": first}),
            json!({"match": "no subtask for step 3 (Step3)", "reply": design_block(3, "f3")}),
        ]);
        let design = with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_detailed_design(ctx, &outline(5), "")).unwrap();
        let names: Vec<_> = design.subtasks.iter().map(|s| s.function_name.as_str()).collect();
        assert_eq!(names, ["f1", "f2", "f3", "f4", "f5"]);
    }

    #[test]
    fn empty_outline_rejected_before_any_call() {
        let (llm, backend) = transcript(&[]);
        let err = with_ctx(&llm, &ToolRegistry::new(), |ctx| {
            generate_detailed_design(ctx, &AlgorithmOutline { steps: vec![] }, "")
        })
        .unwrap_err();
        assert_eq!(err, SynthesisError::EmptyOutline);
        assert_eq!(backend.consumed(), (0, 0));
    }

    fn one_subtask_design() -> DetailedDesign {
        parse_design(&(design_block(1, "bandpass_filter") + &design_block(2, "detect_peaks"))).unwrap()
    }

    #[test]
    fn module_passes_gate() {
        let code = "```python\nfrom scipy.signal import butter, filtfilt\n\ndef bandpass_filter(x, fs):\n    b, a = butter(2, [5 / fs, 15 / fs], btype='band')\n    return detect_peaks(filtfilt(b, a, x))\n```";
        let (llm, _) = transcript(&[json!({"match": "Write the Python function `bandpass_filter`", "reply": code})]);
        let design = one_subtask_design();
        let module =
            with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_module_code(ctx, &design.subtasks[0], &design)).unwrap();
        assert_eq!(module.function_name, "bandpass_filter");
        assert_eq!(module.imports, ["scipy"]);
    }

    #[test]
    fn placeholder_module_is_repaired() {
        let (llm, _) = transcript(&[
            json!({"match": "Write the Python function `bandpass_filter`", "reply": "```python\ndef bandpass_filter(x):\n    pass\n```"}),
            json!({"match": "Null functions (bodies with only placeholder statements): bandpass_filter", "reply": "```python\ndef bandpass_filter(x):\n    return [v * 2 for v in x]\n```"}),
        ]);
        let design = one_subtask_design();
        let module =
            with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_module_code(ctx, &design.subtasks[0], &design)).unwrap();
        assert!(module.code.contains("v * 2"));
    }

    #[test]
    fn prose_module_is_no_code_block() {
        let (llm, _) = transcript(&[
            json!({"match": "Write the Python function", "reply": "I would filter it."}),
            json!({"match": "did not contain a fenced code block", "reply": "Sorry, still prose."}),
        ]);
        let design = one_subtask_design();
        let err = with_ctx(&llm, &ToolRegistry::new(), |ctx| generate_module_code(ctx, &design.subtasks[0], &design))
            .unwrap_err();
        assert_eq!(err, SynthesisError::NoCodeBlock { stage: Stage::ModuleCodegen });
    }

    fn modules() -> Vec<CodeModule> {
        vec![CodeModule {
            subtask_label: "1".into(),
            function_name: "f".into(),
            code: "def f():\n    return 1\n".into(),
            imports: vec![],
        }]
    }

    const PROGRAM: &str = "```python\ndef f():\n    return 1\n\nif __name__ == '__main__':\n    print('FINAL_METRIC: accuracy=%f' % f())\n```\n";
    const DOCS: &str = "````markdown\n# Usage\n```bash\npython3 main.py -i data\n```\n````\n";

    #[test]
    fn integration_produces_documented_program() {
        let (llm, _) = transcript(&[json!({"match": "Integrate the code segments", "reply": format!("{PROGRAM}{DOCS}")})]);
        let program =
            with_ctx(&llm, &ToolRegistry::new(), |ctx| integrate_modules(ctx, &modules(), 1, Origin::Integration, None))
                .unwrap();
        assert_eq!(program.version, 1);
        assert!(program.documentation.starts_with("# Usage"));
        assert!(program.source_text.contains("FINAL_METRIC"));
    }

    #[test]
    fn missing_docs_reprompts_once() {
        let (llm, _) = transcript(&[
            json!({"match": "Integrate the code segments", "reply": PROGRAM}),
            json!({"match": "no non-empty documentation block", "reply": PROGRAM}),
        ]);
        let err =
            with_ctx(&llm, &ToolRegistry::new(), |ctx| integrate_modules(ctx, &modules(), 1, Origin::Integration, None))
                .unwrap_err();
        assert_eq!(err, SynthesisError::MissingDocumentation);
    }

    #[test]
    fn integrated_undefined_call_fails_gate() {
        let bad = "```python\ndef main():\n    return helper_nowhere()\n```\n";
        let (llm, _) = transcript(&[
            json!({"match": "Integrate the code segments", "reply": format!("{bad}{DOCS}")}),
            json!({"match": "helper_nowhere", "reply": format!("{bad}{DOCS}")}),
        ]);
        let err =
            with_ctx(&llm, &ToolRegistry::new(), |ctx| integrate_modules(ctx, &modules(), 1, Origin::Integration, None))
                .unwrap_err();
        match err {
            SynthesisError::GateFailed { stage: Stage::Integration, report } => {
                assert_eq!(report.undefined_calls, ["helper_nowhere"])
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
