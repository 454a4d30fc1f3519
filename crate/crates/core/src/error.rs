//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map onto the
//! CLI exit codes: usage problems are caught by the argument parser before
//! any of these are constructed, data problems (`Parse`, `Schema`, `Io`, ...)
//! exit with 2, numeric failures (`NotPositiveDefinite`, `Calibration`, ...)
//! exit with 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix expected to be symmetric positive definite failed a pivot or
    /// symmetry check.
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    /// An argument left the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A cell could not be parsed as a number.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Structural problem with an input file (missing column, bad label, ...).
    #[error("schema error: {0}")]
    Schema(String),

    /// Feature with zero variance where a nonzero spread is required.
    #[error("feature '{0}' is constant")]
    ConstantFeature(String),

    /// All labels identical where both classes are required.
    #[error("labels are constant; need both classes present")]
    ConstantLabel,

    /// Fewer samples than the operation needs.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Mask transforms need at least one mutable coordinate.
    #[error("mutable feature set is empty")]
    EmptyMutableSet,

    /// Operation requires positive-class samples but none are present.
    #[error("no positive-class samples in dataset")]
    NoPositiveSamples,

    /// Budget matching failed to bracket or converge on a target norm.
    #[error("budget calibration failed: {0}")]
    Calibration(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// The weighting transform cannot be inverted (mask kinds, or a
    /// deserialized transform with a corrupt inverse factor).
    #[error("weighting transform is not invertible: {0}")]
    NonInvertibleOmega(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Serialization(String),

    /// Replayed run produced outputs that differ from the manifest record.
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::Io { .. }
            | Error::Serialization(_)
            | Error::ReplayMismatch(_)
            | Error::EmptyInput(_) => 2,
            _ => 3,
        }
    }
}
