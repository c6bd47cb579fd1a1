use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the graph/training pipeline.
///
/// Each variant maps onto a process exit code through [`Error::exit_code`],
/// which the CLI and the C ABI both reuse.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown personality label {0:?}")]
    Label(String),

    #[error("cache format error in record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 input, 3 numeric, 4 transport, 5 consistency.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Transport { .. } => 4,
            Error::Consistency(_) => 5,
            _ => 2,
        }
    }

    /// Prefixes the message with extra context, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{ctx}: {m}")),
            Error::EmptyInput(m) => Error::EmptyInput(format!("{ctx}: {m}")),
            Error::DegenerateInput(m) => Error::DegenerateInput(format!("{ctx}: {m}")),
            Error::Parameter(m) => Error::Parameter(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Consistency(m) => Error::Consistency(format!("{ctx}: {m}")),
            Error::Transport { retries, message } => Error::Transport {
                retries,
                message: format!("{ctx}: {message}"),
            },
            other => other,
        }
    }
}
