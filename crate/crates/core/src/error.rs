use thiserror::Error;

use crate::model::ValidationIssue;

/// Errors raised by the inference engines and the file-format layer.
#[derive(Debug, Error)]
pub enum CtbnError {
    #[error("model validation failed with {} issue(s):\n{}", .0.len(), join_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("invalid evidence: {0}")]
    Evidence(String),

    #[error("evidence has zero probability: {0}")]
    ImpossibleEvidence(String),

    #[error("joint state space has {states} states, exceeding the cap of {cap}")]
    SizeCap { states: usize, cap: usize },

    #[error("scope error: {0}")]
    Scope(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T, E = CtbnError> = std::result::Result<T, E>;
