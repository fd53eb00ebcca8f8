use thiserror::Error;

/// Errors raised by the dynamical-systems primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("system `{system}` is not invertible: negative iterate {n} requested")]
    NonInvertible { system: &'static str, n: i64 },

    #[error("point kind `{found}` does not match system kind `{expected}`")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("singular cocycle: |h| = 0 at {at}")]
    SingularCocycle { at: String },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("zero weight at index {index}: right inverse undefined")]
    ZeroWeight { index: i64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by the numbers themselves rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SingularCocycle { .. } | Error::ZeroWeight { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
