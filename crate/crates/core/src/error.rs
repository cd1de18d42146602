//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected layout) disagree on shape.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A scalar or enum argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A binary file does not look like what its header claims.
    #[error("format error in {what}: expected magic 0x{expected:08x}, found 0x{found:08x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    /// A file is structurally valid but internally inconsistent
    /// (count mismatches, truncated payload, out-of-range labels, ...).
    #[error("data consistency error: {0}")]
    DataConsistency(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: {message}")]
    TrainingDiverged { iteration: usize, message: String },

    /// A model is degenerate for the requested operation
    /// (zero weight vector, identical class columns, ...).
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    /// A metric has no defined value on the given inputs
    /// (for example no correctly classified examples).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// The operation does not support the given network architecture.
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    /// A tensor operation produced or received a NaN/Inf value.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
