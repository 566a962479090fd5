use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed validation. `key` names the offending field, `index` the
    /// offending position when there is one.
    #[error("invalid {key}{}: {msg}", index.as_ref().map(|i| format!("[{i}]")).unwrap_or_default())]
    Invalid {
        key: String,
        index: Option<String>,
        msg: String,
    },

    /// A classifier or derivative needed a strictly positive probability.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("value iteration did not converge within {0} iterations")]
    NonConvergence(usize),

    /// State-wise policy improvement was violated, which signals a bug.
    #[error("improvement violated at iteration {iteration}, state {state}: V_next - V_prev = {delta:e}")]
    ImprovementViolation {
        iteration: usize,
        state: usize,
        delta: f64,
    },

    /// Configuration lies within `kink_tol` of a clip boundary.
    #[error("untestable point: classifier value within {0:e} of the margin")]
    NearKink(f64),

    #[error("non-finite value at iteration {0}")]
    NonFinite(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.into(),
            index: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid_at(
        key: impl Into<String>,
        index: impl Into<String>,
        msg: impl Into<String>,
    ) -> Self {
        Error::Invalid {
            key: key.into(),
            index: Some(index.into()),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
