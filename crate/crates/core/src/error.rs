//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("truncation overflow: required Fock dimension exceeds cap {cap} (needed > {required})")]
    TruncationOverflow { required: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel evaluation failed at pair ({i}, {j}): {source}")]
    GramEntry {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: String, iterations: usize },

    #[error("svm solver did not converge within the iteration budget")]
    SvmNotConverged { model: Box<crate::svm::SvmModel> },

    #[error("quadrature under-resolved: residual moved from {coarse:.3e} to {fine:.3e} under node doubling")]
    QuadratureUnderResolved { coarse: f64, fine: f64 },

    #[error("finite-difference derivative failed to converge: {0}")]
    DerivativeDiverged(String),

    #[error("dataset unavailable: {0}")]
    DatasetUnavailable(String),

    #[error("malformed archive at byte {offset}: {what}")]
    MalformedArchive { offset: u64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("zip: {0}")]
    Zip(#[from] zip::result::ZipError),
}

pub type Result<T> = std::result::Result<T, Error>;
