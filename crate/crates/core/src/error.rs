use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Unsupported(String),

    /// Φ = E_d[φφᵀ] is not positive definite, so the least-squares fit has no unique solution.
    #[error("feature second-moment matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularSecondMoment { min_eigenvalue: f64 },

    #[error("second-moment matrix is indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    IndefiniteSecondMoment { min_eigenvalue: f64 },

    #[error("weights diverged at iteration {iteration}: norm {norm:e}")]
    Diverged { iteration: usize, norm: f64 },

    #[error("step-size or decay assumptions violated: {0}")]
    AssumptionViolated(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::AssumptionViolated(_)
                | Error::SingularSecondMoment { .. }
                | Error::IndefiniteSecondMoment { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
