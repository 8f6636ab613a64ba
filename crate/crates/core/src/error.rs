use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a domain constraint (bad site value, wrong dimension, bad partition...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A dense construction was requested for a system that is too large.
    #[error("system size {n} exceeds the limit of {limit} sites for {what}")]
    SizeLimit { what: &'static str, n: usize, limit: usize },

    /// An estimator received no samples.
    #[error("empty sample batch")]
    EmptyBatch,

    /// A configuration whose amplitude underflowed to zero was hit.
    #[error("amplitude underflow at configuration {0:?}")]
    Underflow(Vec<i8>),

    /// Too many samples were flagged for underflow during one step.
    #[error("{flagged} of {total} samples flagged for amplitude underflow")]
    TooManyFlagged { flagged: usize, total: usize },

    /// A variance estimate was zero where a ratio requires it to be positive.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(&'static str),

    /// The regularized SR system could not be solved to finite values.
    #[error("linear solve failed (diagonal ratio {condition:.3e}): {reason}")]
    Solve { reason: String, condition: f64 },

    /// More than one eigenvalue of L sits at zero.
    #[error("steady state is not unique: {count} eigenvalues within {tol:e} of zero")]
    AmbiguousSteadyState { count: usize, tol: f64 },

    /// No eigenvalue of L was close enough to zero.
    #[error("no stationary eigenvalue found (largest real part {0:e})")]
    NoSteadyState(f64),

    /// A density matrix had an eigenvalue too negative to be clipped.
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    /// A dense eigen or singular value decomposition did not converge.
    #[error("dense decomposition failed: {0}")]
    Decomposition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
