//! Program synthesis: outline, detailed design, per-function code and the
//! integrated program with its documentation.

pub mod codeblock;
pub mod gate;
pub mod parse;
mod prompts;
mod stages;
pub mod template;

use thiserror::Error;

use crate::llm::{Llm, LlmError, Message, ToolRegistry};

pub use codeblock::{extract_code_blocks, CodeBlock};
pub use gate::{scan_python, static_gate, GateConfig, GateReport, PythonScan, Verdict};
pub use parse::{parse_design, parse_outline, AlgorithmOutline, DetailedDesign, OutlineStep, Subtask};
pub use stages::{
    generate_detailed_design, generate_module_code, generate_modules, generate_outline, integrate_modules,
    module_gate, program_gate, CodeModule, StageContext, MAX_PROGRAM_BYTES,
};
pub use template::{render_prompt, Bindings, PromptTemplate, RenderError, Stage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("the outline has no steps")]
    EmptyOutline,
    #[error("unparseable {} response: {reason}", stage.name())]
    UnparseableResponse { stage: Stage, reason: String },
    #[error("the detailed design leaves outline steps {missing:?} without subtasks")]
    CoverageGap { missing: Vec<usize> },
    #[error("the {} reply contains no fenced code block", stage.name())]
    NoCodeBlock { stage: Stage },
    #[error("the {} code failed the static gate:\n{}", stage.name(), report.describe())]
    GateFailed { stage: Stage, report: GateReport },
    #[error("the integration reply has no Markdown documentation block")]
    MissingDocumentation,
}

/// Sends `prompt`; if `parse` rejects the reply, sends the follow-up built by
/// `reprompt` in the same conversation and parses once more.
pub(crate) fn ask_with_repair<T, E>(
    llm: &Llm,
    tools: &ToolRegistry,
    prompt: String,
    mut parse: impl FnMut(&str) -> Result<T, E>,
    reprompt: impl Fn(&E) -> String,
) -> Result<Result<T, E>, LlmError> {
    let mut conversation = Llm::conversation(prompt);
    let reply = llm.converse(&mut conversation, tools)?;
    let problem = match parse(&reply) {
        Ok(parsed) => return Ok(Ok(parsed)),
        Err(problem) => problem,
    };
    conversation.push(Message::user(reprompt(&problem)));
    let reply = llm.converse(&mut conversation, tools)?;
    Ok(parse(&reply))
}

pub(crate) fn format_reminder(issue: &str) -> String {
    format!(
        "Your previous reply did not follow the response format: {issue}\n\
         Answer again using exactly the requested response format."
    )
}
