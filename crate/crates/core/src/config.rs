//! Per-session settings.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::ChunkingConfig;
use crate::sandbox::ExecutionLimits;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugConfig {
    pub max_rounds: u32,
}

impl Default for DebugConfig {
    fn default() -> Self {
        Self { max_rounds: 5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Continue automatically after every iteration.
    #[default]
    Headless,
    /// Wait at every feedback gate until feedback or continue arrives.
    Interactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub iterations: u32,
    pub feedback_gate: FeedbackMode,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { iterations: 5, feedback_gate: FeedbackMode::Headless }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub optimize: OptimizeConfig,
    pub debug: DebugConfig,
    pub limits: ExecutionLimits,
    pub chunking: ChunkingConfig,
    /// Chunks retrieved per prompt.
    pub retrieval_k: usize,
    /// Search results fetched per terminology.
    pub max_search_results: usize,
    pub max_tool_rounds: u32,
    /// How much of stderr the debug prompt embeds.
    pub stderr_tail_bytes: usize,
    pub user_documents: Vec<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            optimize: OptimizeConfig::default(),
            debug: DebugConfig::default(),
            limits: ExecutionLimits::default(),
            chunking: ChunkingConfig::default(),
            retrieval_k: 6,
            max_search_results: 5,
            max_tool_rounds: 8,
            stderr_tail_bytes: 16 * 1024,
            user_documents: Vec::new(),
        }
    }
}

/// Command-line or request-level adjustments to the default config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub iterations: Option<u32>,
    pub debug_rounds: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub interactive: Option<bool>,
    pub documents: Vec<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut config: SessionConfig) -> Result<SessionConfig, ConfigError> {
        if let Some(n) = self.iterations {
            config.optimize.iterations = n;
        }
        if let Some(n) = self.debug_rounds {
            config.debug.max_rounds = n;
        }
        if let Some(secs) = self.timeout_secs {
            config.limits.wall_timeout = std::time::Duration::try_from_secs_f64(secs)
                .map_err(|_| ConfigError(format!("timeout {secs} is not a valid duration")))?;
        }
        if let Some(interactive) = self.interactive {
            config.optimize.feedback_gate = if interactive { FeedbackMode::Interactive } else { FeedbackMode::Headless };
        }
        config.user_documents.extend(self.documents.iter().cloned());
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid session config: {0}")]
pub struct ConfigError(pub String);

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.optimize.iterations == 0 {
            return Err(ConfigError("iterations must be at least 1".into()));
        }
        if self.debug.max_rounds == 0 {
            return Err(ConfigError("debug max_rounds must be at least 1".into()));
        }
        if self.limits.wall_timeout.is_zero() {
            return Err(ConfigError("wall timeout must be positive".into()));
        }
        if self.limits.max_output_bytes == 0 {
            return Err(ConfigError("max_output_bytes must be positive".into()));
        }
        self.chunking.validate().map_err(ConfigError)
    }
}
