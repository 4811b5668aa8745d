//! The structured user problem and its on-disk file format.
//!
//! A problem file is TOML with exactly these keys:
//!
//! ```toml
//! target = "Detect all R-peaks in the MIT-BIH records and report accuracy."
//! remarks = "Only the zip file from the official website is available."
//! input_spec = "A directory of CSV records."
//! output_spec = "Per-record accuracy and FINAL_METRIC: accuracy=<value>."
//! dataset_path = "data"
//! interpreter_command = "python3 {script} -i {input}"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCRIPT_PLACEHOLDER: &str = "{script}";
pub const INPUT_PLACEHOLDER: &str = "{input}";

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("problem file is not valid: {0}")]
    Parse(String),
    #[error("target must not be empty")]
    EmptyTarget,
    #[error("interpreter_command must contain {placeholder} exactly once (found {count})")]
    Placeholder {
        placeholder: &'static str,
        count: usize,
    },
    #[error("dataset path {0} does not exist")]
    MissingDataset(PathBuf),
}

/// Four-part task description plus the execution settings needed by the
/// improvement loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProblem {
    pub target: String,
    #[serde(default)]
    pub remarks: String,
    #[serde(default)]
    pub input_spec: String,
    #[serde(default)]
    pub output_spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub interpreter_command: String,
}

impl UserProblem {
    /// Parses and validates a problem file.
    pub fn parse(text: &str) -> Result<Self, ProblemError> {
        let problem: UserProblem =
            toml::from_str(text).map_err(|e| ProblemError::Parse(e.message().to_string()))?;
        problem.validate()?;
        Ok(problem)
    }

    /// Reads a problem file and resolves a relative `dataset_path` against the
    /// directory containing the file.
    pub fn load(path: &Path) -> Result<(Self, String), ProblemError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProblemError::Parse(format!("{}: {e}", path.display())))?;
        let mut problem = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            problem.resolve_dataset(base);
        }
        Ok((problem, text))
    }

    pub fn resolve_dataset(&mut self, base: &Path) {
        if let Some(dataset) = &self.dataset_path {
            if dataset.is_relative() {
                self.dataset_path = Some(base.join(dataset));
            }
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.target.trim().is_empty() {
            return Err(ProblemError::EmptyTarget);
        }
        for placeholder in [SCRIPT_PLACEHOLDER, INPUT_PLACEHOLDER] {
            let count = self.interpreter_command.matches(placeholder).count();
            if count != 1 {
                return Err(ProblemError::Placeholder { placeholder, count });
            }
        }
        Ok(())
    }

    /// Checked right before a program is executed.
    pub fn check_dataset(&self) -> Result<(), ProblemError> {
        match &self.dataset_path {
            Some(path) if !path.exists() => Err(ProblemError::MissingDataset(path.clone())),
            _ => Ok(()),
        }
    }

    /// The canonical text block reiterated at the top of every prompt.
    pub fn render(&self) -> String {
        format!(
            "Target: {}\nRemarks: {}\nInput specification: {}\nOutput specification: {}",
            self.target.trim(),
            or_none(&self.remarks),
            or_none(&self.input_spec),
            or_none(&self.output_spec),
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("problem serializes")
    }
}

fn or_none(text: &str) -> &str {
    let text = text.trim();
    if text.is_empty() {
        "(none)"
    } else {
        text
    }
}
