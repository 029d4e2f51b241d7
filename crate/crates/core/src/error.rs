use thiserror::Error;

/// Errors produced by the diffusion-path classifier.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("simulation failed on path {path} at step {step}: {reason}")]
    Simulation {
        path: usize,
        step: usize,
        reason: String,
    },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}
