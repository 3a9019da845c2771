use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by scene generation, file handling and the command line.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] worldsheet::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("scene geometry: {0}")]
    Geometry(String),

    /// A numerical check (gradient oracle, fit quality) did not hold.
    #[error("numeric check failed: {0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 2 for numeric faults, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) if e.is_numeric() => 2,
            HarnessError::Check(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_separate_numeric_faults() {
        assert_eq!(HarnessError::Core(worldsheet::Error::Divergence { iteration: 3 }).exit_code(), 2);
        assert_eq!(HarnessError::Core(worldsheet::Error::NumericFault("nan".into())).exit_code(), 2);
        assert_eq!(HarnessError::Core(worldsheet::Error::InvalidInput("x".into())).exit_code(), 1);
        assert_eq!(HarnessError::Invalid("x".into()).exit_code(), 1);
    }
}
