use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum FracmaxError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {what} (lambda = {lambda:.4}, mu = {mu:.4})")]
    HolderPrecondition { what: String, lambda: f64, mu: f64 },

    #[error("solver diverged on path {path} at step {step}")]
    Divergence { path: usize, step: usize },

    #[error("functional evaluation returned a non-finite value on path {path}")]
    NonFiniteFunctional { path: usize },

    #[error("ill-conditioned fundamental pair: product defect {defect:.3e} exceeds 10x tolerance {tol:.3e}")]
    IllConditioned { defect: f64, tol: f64 },

    #[error("degenerate regression design matrix (ridge fallback also failed)")]
    DegenerateRegression,

    #[error("optimizer stalled: no descent after {backtracks} backtracks at iteration {iter}")]
    Stalled { iter: usize, backtracks: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{failed} of {total} ensemble paths failed; first: {first}")]
    EnsembleFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FracmaxError>;

pub(crate) fn invalid(msg: impl Into<String>) -> FracmaxError {
    FracmaxError::InvalidArgument(msg.into())
}
