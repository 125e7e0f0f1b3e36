use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid length {len} for {op}: {reason}")]
    InvalidLength {
        op: &'static str,
        len: usize,
        reason: &'static str,
    },

    /// A caller broke an API precondition (non-scalar loss, empty input, ...).
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("session too short: {frames} frames, need more than {required}")]
    SessionTooShort { frames: usize, required: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error in {path} at row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
