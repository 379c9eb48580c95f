use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular KKT system (pivot magnitude {pivot:e})")]
    SingularKkt { pivot: f64 },

    #[error("subproblem of agent {agent} failed at iteration {iteration}: {reason}")]
    SubproblemFailed {
        agent: usize,
        iteration: usize,
        reason: String,
    },

    #[error("dual decomposition diverged at iteration {iteration} (disagreement {disagreement:e})")]
    Diverged { iteration: usize, disagreement: f64 },

    #[error("centralized solve failed: {0}")]
    CentralizedFailed(String),

    #[error("performance ratio undefined: centralized cost is zero")]
    ZeroReferenceCost,

    #[error("simulation aborted at step {step}: {source}")]
    SimulationAborted {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
