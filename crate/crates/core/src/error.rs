use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("no samples survived filtering to [{lo}, {hi}]")]
    EmptyStats { lo: f64, hi: f64 },
    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checksum mismatch for case {case_id} ({path})")]
    Checksum { case_id: String, path: PathBuf },
    #[error("malformed {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("insufficient frames for case {case_id}: need {need}, have {have}")]
    InsufficientFrames {
        case_id: String,
        need: usize,
        have: usize,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CoreError::Malformed {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
