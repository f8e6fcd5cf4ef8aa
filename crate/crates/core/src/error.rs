use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Span;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty token surface")]
    EmptySurface,

    #[error("overlapping spans: {first:?} and {second:?}")]
    OverlappingSpans { first: Span, second: Span },

    #[error("span {span:?} outside sentence of {len} tokens")]
    SpanOutOfBounds { span: Span, len: usize },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{source_name}:{line}: annotated text {expected:?} does not match document text {found:?}")]
    TextMismatch {
        source_name: String,
        line: usize,
        expected: String,
        found: String,
    },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("lattice position {position} has an empty allowed set")]
    EmptyAllowedSet { position: usize },

    #[error("lattice admits no legal label sequence")]
    InfeasibleLattice,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("PCA needs at least {out_dim} nodes, got {nodes}")]
    TooFewNodes { nodes: usize, out_dim: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
