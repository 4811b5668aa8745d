//! Program versions, metrics and optimization iteration records.

use serde::{Deserialize, Serialize};

use crate::sandbox::ExecutionReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Integration,
    DebugFix,
    Optimization,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedProgram {
    pub version: u32,
    pub source_text: String,
    pub documentation: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<u32>,
}

impl SynthesizedProgram {
    /// Versions without a parent start a new lineage.
    pub fn is_root(&self) -> bool {
        self.parent_version.is_none()
    }
}

/// Unified diff of two program texts, labelled with their versions.
pub fn unified_diff(old: &SynthesizedProgram, new: &SynthesizedProgram) -> String {
    similar::TextDiff::from_lines(&old.source_text, &new.source_text)
        .unified_diff()
        .context_radius(3)
        .header(&format!("v{}", old.version), &format!("v{}", new.version))
        .to_string()
}

/// A single named figure of merit reported by a program run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

impl Metric {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value }
    }
}

/// The debugged version-1 program that optimization iterations compete with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    /// Last program version executed in this iteration. Absent when synthesis
    /// failed before anything could run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ExecutionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl IterationRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.metric.is_some()
    }
}

/// One execution of one version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub report: ExecutionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
}
