use thiserror::Error;

/// Errors produced by the model, inference and generator routines.
#[derive(Debug, Error)]
pub enum SaltError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration limit reached after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("system is not stable: spectral radius {spectral_radius}")]
    Unstable { spectral_radius: f64 },

    #[error("matrix is defective: modal reconstruction residual {residual:e}")]
    Defective { residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("EM iteration {iteration}: {source}")]
    Fit {
        iteration: usize,
        #[source]
        source: Box<SaltError>,
    },
}

impl SaltError {
    /// True for failures that come from numerics rather than bad arguments.
    pub fn is_numerical(&self) -> bool {
        match self {
            SaltError::Numerical(_)
            | SaltError::NotConverged { .. }
            | SaltError::Unstable { .. }
            | SaltError::Defective { .. } => true,
            SaltError::Fit { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SaltError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SaltError::Shape(msg.into()))
}
