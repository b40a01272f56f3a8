use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, lengths, ranges).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    /// A class appears in two splits that must be disjoint.
    #[error("split violation: class {class} ({name}) is in both {first} and {second}")]
    SplitViolation {
        class: u32,
        name: String,
        first: &'static str,
        second: &'static str,
    },

    /// An evaluation input contains a class the model may have seen in training.
    #[error("zero-shot violation: {0}")]
    ZeroShot(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than by bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}
