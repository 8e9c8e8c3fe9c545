use thiserror::Error;

/// Errors raised by model construction, the numerical solvers and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its precondition.
    /// `path` locates the offending field (e.g. `model.modes[1].q`).
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    /// The pair (A, B) has an uncontrollable mode that is not asymptotically stable.
    #[error("system is not stabilizable")]
    NotStabilizable,

    #[error("unstable closed loop: {0}")]
    Unstable(String),

    /// Covariance lost positive semidefiniteness beyond tolerance.
    #[error("covariance not positive semidefinite in {context} (min eigenvalue {min_eig:e})")]
    NotPsd { context: &'static str, min_eig: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::Dimension(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
