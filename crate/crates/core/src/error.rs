use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fusion pipeline.
///
/// Every variant maps onto one of four coarse categories (see [`Error::category`])
/// that the command-line front end prints as a machine-parseable prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("config error at line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("weight file error: {0}")]
    Weights(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category: one of `config`, `io`, `shape`, `numeric`.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::Input(_) => "shape",
            Error::Config(_) | Error::ConfigLine { .. } | Error::Usage(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Format { .. } | Error::Weights(_) | Error::Io { .. } | Error::Csv(_) => "io",
        }
    }
}
