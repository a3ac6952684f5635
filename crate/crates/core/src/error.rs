use thiserror::Error;

/// Errors raised by the samplers and the supporting numerics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A chain was asked to sit on a state of zero density.
    #[error("invalid chain state: {0}")]
    InvalidState(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("point lies outside the chart domain: {0}")]
    OutOfDomain(String),

    #[error("no feasible starting point: {0}")]
    Infeasible(String),

    /// Reducible or periodic transition kernel.
    #[error("kernel structure: {0}")]
    Structure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("chain is not reversible: {0}")]
    NotReversible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the caller's parameters rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Capacity(_))
    }
}
