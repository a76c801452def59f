//! Crate-wide error type.

use thiserror::Error;

use crate::lp::LpError;
use crate::tensor::TensorError;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or tape failure.
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// Malformed network.
    #[error("invalid network: {0}")]
    Network(String),
    /// Malformed file.
    #[error("parse error at byte {offset}: {msg}")]
    Parse {
        /// Byte offset of the offending token.
        offset: usize,
        /// What went wrong.
        msg: String,
    },
    /// Invalid argument.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Operation routed to an engine that does not handle it.
    #[error("{0} is not handled by this engine")]
    WrongEngine(String),
    /// LP solver failure.
    #[error(transparent)]
    Lp(#[from] LpError),
    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        /// Epoch index.
        epoch: usize,
        /// Batch index within the epoch.
        batch: usize,
        /// Which quantity was non-finite.
        detail: String,
    },
    /// Invalid training config.
    #[error("config: {0}")]
    Config(String),
    /// File system failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result with the crate-wide [`Error`].
pub type Result<T> = std::result::Result<T, Error>;
