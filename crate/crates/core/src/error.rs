use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Binary volume or checkpoint files that fail to parse.
    #[error("{context} at byte {offset}: {message}")]
    Format {
        context: String,
        offset: u64,
        message: String,
    },

    /// Text tables (CSV) that fail to parse.
    #[error("{context}, line {line}: {message}")]
    Table {
        context: String,
        line: usize,
        message: String,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("non-finite {quantity} at step {step} (batch fingerprint {fingerprint:016x})")]
    NonFinite {
        quantity: &'static str,
        step: u64,
        fingerprint: u64,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn table(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Table {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(context: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            offset,
            message: message.into(),
        }
    }
}
