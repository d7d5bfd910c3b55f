use std::path::PathBuf;

use netcoupler::Error;
use serde::Serialize;

/// Error reported on stderr as one JSON object, with the process exit code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            error: "config",
            message: message.into(),
            exit_code: EXIT_CONFIG,
            checkpoint: None,
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            error: "input",
            message: message.into(),
            exit_code: EXIT_FAILURE,
            checkpoint: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("failure serializes")
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (error, exit_code, checkpoint) = match e {
            Error::Config(_) => ("config", EXIT_CONFIG, None),
            Error::Dimension(_) => ("dimension", EXIT_CONFIG, None),
            Error::Json(_) => ("config", EXIT_CONFIG, None),
            Error::Divergence { .. } => ("divergence", EXIT_NUMERICAL, None),
            Error::NonFinite { .. } => ("non_finite", EXIT_NUMERICAL, None),
            Error::Aborted { checkpoint, .. } => ("aborted", EXIT_NUMERICAL, checkpoint),
            Error::Domain(_) => ("domain", EXIT_FAILURE, None),
            Error::Resource(_) => ("resource", EXIT_FAILURE, None),
            Error::Io(_) => ("io", EXIT_FAILURE, None),
            Error::Csv(_) => ("io", EXIT_FAILURE, None),
            Error::Format(_) => ("format", EXIT_FAILURE, None),
        };
        Self {
            error,
            message,
            exit_code,
            checkpoint,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self {
            error: "io",
            message: e.to_string(),
            exit_code: EXIT_FAILURE,
            checkpoint: None,
        }
    }
}
