//! Crate-wide error type.

/// Errors produced by model construction, filtering and learning.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs have incompatible shapes or out-of-range values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A stationary initial distribution was requested for a transition
    /// matrix with spectral radius >= 1.
    #[error("non-stationary dynamics: {0}")]
    NonStationary(String),

    /// Every particle carries zero weight; the filter cannot continue.
    #[error("particle collapse at step {t}: all log-weights are -inf")]
    ParticleCollapse { t: usize },

    /// A linear-algebra or floating-point operation failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
