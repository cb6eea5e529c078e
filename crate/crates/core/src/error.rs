use thiserror::Error;

/// Errors raised by estimators, oracles and solvers.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SqError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A query function left its declared range, or a sample fell outside the
    /// declared support.
    #[error("query contract violated: {0}")]
    Contract(String),

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("numerical failure: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    #[error("frame calibration failed: level {achieved} exceeds {limit}")]
    Calibration { achieved: f64, limit: f64 },

    #[error("ill-conditioned shape: {0}")]
    Conditioning(String),

    #[error("geometry failure: {0}")]
    Geometry(String),

    #[error("update bound exceeded: {updates} updates, bound {bound}")]
    UpdateBound { updates: usize, bound: f64 },
}

pub type Result<T> = std::result::Result<T, SqError>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(SqError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
