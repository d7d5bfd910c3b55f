use thiserror::Error;

/// Errors raised across the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("simulation diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("non-finite objective ({term}) at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("optimization aborted at step {step}: {detail}")]
    Aborted {
        step: usize,
        detail: String,
        checkpoint: Option<std::path::PathBuf>,
    },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed artifact: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain_err(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
