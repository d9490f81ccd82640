use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation contract (wrong dimensions, missing
    /// Hessian, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid construction parameters (non-PD matrix, negative deadline, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Certificate computation failed (e.g. no tube boundary point found).
    #[error("certificate error: {0}")]
    Certificate(String),

    /// The closed-loop integration produced a non-finite state.
    #[error("simulation aborted at step {step} (t = {time}): {reason}")]
    SimulationAborted {
        step: usize,
        time: f64,
        reason: String,
    },

    /// An operation was evaluated outside its time domain.
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
