use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameterization: {0}")]
    InvalidParameters(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("optimizer did not converge after {iterations} iterations (best value {best_value}, simplex spread {spread:e})")]
    Convergence {
        iterations: usize,
        best_value: f64,
        spread: f64,
    },

    #[error("inconsistent mixture components: {0}")]
    InconsistentComponents(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Domain(_)
            | Error::InsufficientData(_)
            | Error::Ingestion(_)
            | Error::Serialization(_)
            | Error::Io(_)
            | Error::Shape { .. }
            | Error::Contract(_) => ErrorClass::Data,
            Error::InvalidParameters(_)
            | Error::Convergence { .. }
            | Error::InconsistentComponents(_)
            | Error::Divergence { .. } => ErrorClass::Numerical,
        }
    }

    pub fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
