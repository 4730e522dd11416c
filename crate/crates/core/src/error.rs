use thiserror::Error;

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum LabError {
    /// A precondition of an operation was violated by its inputs.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The oracle refused a batch because the remaining budget is too small.
    #[error("query budget exhausted: {requested} requested, {remaining} remaining")]
    BudgetExhausted { requested: u64, remaining: u64 },

    /// Connection refused, reset or timed out while talking to a remote oracle.
    #[error("transport error: {0}")]
    Transport(String),

    /// The remote peer answered with something that violates the wire protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The remote server answered with an error object.
    #[error("remote error `{code}`")]
    Remote { code: String, remaining: Option<u64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::LabError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
