use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid scenario matrix: {0}")]
    InvalidScenarios(String),

    #[error("invalid step function: {0}")]
    InvalidStepFunction(String),

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("feasible box is empty: lower bounds sum to {0} > 1")]
    EmptyBox(f64),

    #[error("anchor portfolio is infeasible (residual {residual:.6e})")]
    InfeasibleAnchor { residual: f64 },

    #[error("risk-free return {riskfree} must exceed the reference quantile at 1 ({reference_top})")]
    RiskfreeBelowReference { riskfree: f64, reference_top: f64 },

    #[error("objective is not finite at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("scan grid of {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
