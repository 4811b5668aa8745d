//! Sectioned prompt templates with `{{placeholder}}` substitution.
//!
//! Every template opens with a `User Problem` section. Rendering is a single
//! pass: substituted values are never re-scanned for placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Outline,
    DetailedDesign,
    ModuleCodegen,
    Integration,
    Debug,
    Optimize,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Outline,
        Stage::DetailedDesign,
        Stage::ModuleCodegen,
        Stage::Integration,
        Stage::Debug,
        Stage::Optimize,
    ];

    pub fn name(self) -> &'static str {
        self.template().name
    }

    pub fn template(self) -> &'static PromptTemplate {
        use super::prompts::*;
        match self {
            Stage::Outline => &OUTLINE,
            Stage::DetailedDesign => &DETAILED_DESIGN,
            Stage::ModuleCodegen => &MODULE_CODEGEN,
            Stage::Integration => &INTEGRATION,
            Stage::Debug => &DEBUG,
            Stage::Optimize => &OPTIMIZE,
        }
    }
}

#[derive(Debug)]
pub struct Section {
    pub heading: &'static str,
    pub body: &'static str,
}

#[derive(Debug)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub sections: &'static [Section],
    /// The documented placeholder set; must equal what the sections use.
    pub placeholders: &'static [&'static str],
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("template {template}: no binding for {{{{{name}}}}}")]
    MissingBinding { template: &'static str, name: String },
    #[error("template {template}: unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template: &'static str, name: String },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap())
}

impl PromptTemplate {
    /// Placeholder names actually used by the section bodies.
    pub fn used_placeholders(&self) -> BTreeSet<String> {
        self.sections
            .iter()
            .flat_map(|s| placeholder_re().captures_iter(s.body).map(|c| c[1].to_string()))
            .collect()
    }
}

pub type Bindings<'a> = BTreeMap<&'a str, String>;

pub fn render_prompt(template: &PromptTemplate, bindings: &Bindings<'_>) -> Result<String, RenderError> {
    let documented: BTreeSet<&str> = template.placeholders.iter().copied().collect();
    for name in bindings.keys() {
        if !documented.contains(name) {
            return Err(RenderError::UnknownPlaceholder { template: template.name, name: name.to_string() });
        }
    }
    let mut out = String::new();
    for (i, section) in template.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("## ");
        out.push_str(section.heading);
        out.push('\n');
        let mut last = 0;
        for caps in placeholder_re().captures_iter(section.body) {
            let whole = caps.get(0).unwrap();
            let name = &caps[1];
            if !documented.contains(name) {
                return Err(RenderError::UnknownPlaceholder { template: template.name, name: name.to_string() });
            }
            let value = bindings
                .get(name)
                .ok_or_else(|| RenderError::MissingBinding { template: template.name, name: name.to_string() })?;
            out.push_str(&section.body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&section.body[last..]);
        out.push('\n');
    }
    Ok(out)
}
