//! Crate-wide error type.

/// Errors reported by the numerical routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// `beta_n <= 0` or non-finite: the discrete second-moment problem has
    /// lost SPSD well-posedness at element `index` (1-based).
    #[error("discrete well-posedness lost: beta_{index} = {value}")]
    WellPosedness { index: usize, value: f64 },

    #[error("conjugate gradients stalled after {iterations} iterations (relative residual {residual:.3e})")]
    CgMaxIter { iterations: usize, residual: f64 },

    #[error("singular matrix encountered in {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
