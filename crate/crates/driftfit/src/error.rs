//! Crate-wide error type.

/// Errors produced by simulation, filtering, and fitting.
///
/// Variants split into two families: specification problems
/// ([`Invalid`](Error::Invalid), [`Parse`](Error::Parse)) that a caller can
/// fix by changing inputs, and numerical failures that arise at run time
/// from the data (weight collapse, impossible observation sequences,
/// infeasible parameters, solver breakdowns).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model, configuration, or argument violates a documented precondition.
    #[error("invalid specification: {0}")]
    Invalid(String),

    /// Malformed serialized input (CSV or key=value).
    #[error("parse error: {0}")]
    Parse(String),

    /// All particle weights underflowed to zero.
    #[error("particle weights collapsed to zero{}", match .time { Some(t) => format!(" at step {t}"), None => String::new() })]
    WeightCollapse { time: Option<usize> },

    /// The observation sequence has probability zero under the model.
    #[error("observation sequence has zero probability at step {time}")]
    ZeroProbability { time: usize },

    /// Parameters map outside the feasible probability region.
    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The Newton system is singular or numerically rank-deficient.
    #[error("singular linear system in Newton step")]
    SingularSystem,

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for an [`Error::Invalid`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
