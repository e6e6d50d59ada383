use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A kernel with a part unbounded at the origin was evaluated at `t <= 0`.
    #[error("kernel part `{part}` is singular at t = {t}")]
    Singular { part: &'static str, t: f64 },

    /// Constructor invariant violated.
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL violation: dt = {dt:e} exceeds the stable limit {max_dt:e} (CFL number {cfl:.4} > {limit})")]
    Cfl {
        dt: f64,
        max_dt: f64,
        cfl: f64,
        limit: f64,
    },

    #[error("solver aborted at step {step}: {reason}")]
    SolverAbort { step: usize, reason: String },

    #[error("fading-memory tolerance unattainable: {0}")]
    Unattainable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
