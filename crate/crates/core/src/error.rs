use thiserror::Error;

/// Errors produced by the forward model, reduction, and inversion layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("linear solver failed at omega={omega}: {reason} (iterations={iterations}, relative residual={residual:.3e})")]
    Solver {
        omega: f64,
        reason: String,
        iterations: usize,
        residual: f64,
    },

    #[error("singular reduced system at omega={0}")]
    SingularReduced(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{phase} phase failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<CoreError>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CoreError::Validation(msg.into())
    }

    pub fn in_phase(self, phase: &'static str) -> Self {
        CoreError::Phase {
            phase,
            source: Box::new(self),
        }
    }
}
