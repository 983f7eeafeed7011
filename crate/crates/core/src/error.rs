//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors surfaced by every fallible public operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of the operands are inconsistent.
    #[error("dimension mismatch in {context}: {details}")]
    Dimension {
        context: &'static str,
        details: String,
    },

    /// The input is valid shape-wise but carries no usable signal
    /// (all-zero code, constant image, identical samples, ...).
    #[error("degenerate input in {context}: {details}")]
    Degenerate {
        context: &'static str,
        details: String,
    },

    /// A numeric routine could not produce a trustworthy result.
    #[error("numeric failure in {context}: {details}")]
    Numeric {
        context: &'static str,
        details: String,
    },

    /// An iterative solver detected divergence or an unrecoverable state.
    #[error("solver failure in {context}: {details}")]
    Solver {
        context: &'static str,
        details: String,
    },

    /// A serialized tensor or checkpoint is malformed; `offset` is the byte
    /// position at which the problem was detected.
    #[error("format error at byte {offset}: {details}")]
    Format { offset: u64, details: String },

    /// Bad flag value or config-file entry.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, details: impl Into<String>) -> Self {
        Error::Dimension {
            context,
            details: details.into(),
        }
    }

    pub(crate) fn degenerate(context: &'static str, details: impl Into<String>) -> Self {
        Error::Degenerate {
            context,
            details: details.into(),
        }
    }

    pub(crate) fn numeric(context: &'static str, details: impl Into<String>) -> Self {
        Error::Numeric {
            context,
            details: details.into(),
        }
    }

    pub(crate) fn solver(context: &'static str, details: impl Into<String>) -> Self {
        Error::Solver {
            context,
            details: details.into(),
        }
    }

    pub(crate) fn format(offset: u64, details: impl Into<String>) -> Self {
        Error::Format {
            offset,
            details: details.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
