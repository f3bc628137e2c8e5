use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The qubit cannot reach the requested operating point.
    #[error("frequency out of range: {0}")]
    OutOfRange(String),

    #[error("integration step {dt:e} s exceeds the stability limit {limit:e} s")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("frequency grid is not uniform (step deviates by {deviation:.2}%); resample onto a uniform grid first")]
    NonUniformGrid { deviation: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label mismatch, orphan reports: {}", .0.join(", "))]
    OrphanReports(Vec<String>),

    #[error("integrity check failed for: {}", .0.join(", "))]
    Integrity(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Integrity(_) => 4,
            _ => 2,
        }
    }
}
