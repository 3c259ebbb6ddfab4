use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("covariate '{name}' cannot be evaluated at ({x}, {y}): {reason}")]
    CovariateEval {
        name: String,
        x: f64,
        y: f64,
        reason: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fit did not converge after {iterations} iterations (gradient sup-norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_coeffs: Vec<f64>,
    },

    #[error("information matrix is ill-conditioned (condition number {cond:.3e}); check for collinear covariates")]
    Collinear { cond: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for this error: 2 for validation/config problems,
    /// 3 for numeric or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
