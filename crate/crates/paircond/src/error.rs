use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("dilation by {ell} does not fit the bounding box (margin {margin})")]
    BoxOverflow { ell: f64, margin: f64 },

    #[error("no bound state: smallest eigenvalue {eigenvalue} is not negative")]
    NoBoundState { eigenvalue: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("support violation: {0}")]
    Support(String),

    #[error("state is not admissible: spectrum in [{min}, {max}]")]
    Inadmissible { min: f64, max: f64 },

    #[error("fit rejected: {0}")]
    Fit(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
