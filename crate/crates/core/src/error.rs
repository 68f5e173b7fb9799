use thiserror::Error;

/// Errors produced by simulation, configuration, and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A run configuration violates a documented constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument is outside the domain of an operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The request exceeds what the implementation supports
    /// (state-space caps, population explosion guards, ...).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// The observed event rates left the bands under which the three-color
    /// coupling construction is valid; the run is flagged, not continued.
    #[error("coupling invalid: {0}")]
    CouplingInvalid(String),

    #[error("internal invariant breached: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
