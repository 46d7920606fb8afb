use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid trace: {0}")]
    Validation(String),

    #[error("reorientation failed: {0}")]
    Reorientation(String),

    #[error("no road segment within {radius_m} m of fix at t={t}")]
    NoMatch { t: f64, radius_m: f64 },

    #[error("invalid road: {0}")]
    InvalidRoad(String),

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("anchor likelihood is zero wherever the belief has mass")]
    AnchorMismatch,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("not a curve: |omega| = {omega} rad/s is below {min} rad/s")]
    NotACurve { omega: f64, min: f64 },

    #[error("anchor store record {index}: {message}")]
    Store { index: usize, message: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
