use thiserror::Error;

/// Errors produced by the worldsheet pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input value violates a documented precondition (non-finite logit, bad size, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The sheet cannot be built, e.g. a decoded depth is not strictly positive.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Incompatible settings or buffers (texture size mismatch, bad weights, ...).
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// Misuse of the differentiation tape.
    #[error("autodiff usage error: {0}")]
    Usage(String),

    /// NaN or infinity detected in values or gradients.
    #[error("numeric fault: {0}")]
    NumericFault(String),

    /// The fitting loss became non-finite.
    #[error("fitting diverged at iteration {iteration}")]
    Divergence { iteration: usize },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for faults caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericFault(_) | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
