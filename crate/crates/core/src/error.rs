use thiserror::Error;

/// Errors produced by model construction, inference and projection.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad shapes, out-of-range states, invalid parameters.
    #[error("invalid input: {0}")]
    Input(String),

    /// A state space or enumeration exceeds the configured cap.
    #[error("capacity exceeded: {what} requires {required} states, cap is {cap}")]
    Capacity {
        what: &'static str,
        required: f64,
        cap: usize,
    },

    /// An iterative numeric routine failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
