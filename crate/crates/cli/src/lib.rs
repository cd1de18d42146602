//! Library half of the `sparserob` binary: config parsing, experiment
//! stages, artifact manifests, metric aggregation, and SVG charts.

pub mod config;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod svg;

use thiserror::Error;

/// The two CLI failure classes, mapped to distinct exit codes so scripts
/// can tell a bad invocation (2) from a failed experiment stage (3).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage error: {0}")]
    Stage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) => 3,
        }
    }
}
