//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants carry enough context to point at the
/// offending operation or file location.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value (NaN or infinity) showed up where finite math is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// `backward` was requested while leaf values changed since the last forward pass.
    #[error("backward called before forward: graph has stale leaf values")]
    BackwardBeforeForward,

    /// A text or JSON input failed to parse; `line` is 1-based (0 for headers/whole-file).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Stored digest does not match the recomputed one (tampering or frozen-base violation).
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),

    /// Model architecture is inconsistent with the data or checkpoint it is used with.
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
