use crate::dynamics::ShipState;

/// Errors raised by the simulation, learning and evaluation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical blow-up while integrating ship state {state:?}")]
    NumericalBlowup { state: Box<ShipState> },

    #[error("controller not ready: {0}")]
    NotReady(String),

    #[error("training iteration {iteration} aborted: {reason}")]
    IterationAborted { iteration: usize, reason: String },

    #[error("training failed after {failures} consecutive aborted iterations: {reason}")]
    TrainingFailed { failures: usize, reason: String },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
