use thiserror::Error;

use crate::model::Cell;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unsupported instance: {0}")]
    Unsupported(String),
    #[error("escape decomposition failed; stranded cells: {stranded:?}")]
    Decomposition { stranded: Vec<Cell> },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("solver stalled after {rounds} rounds")]
    Stalled { rounds: usize },
    #[error("budget exhausted after {pops} pops with {queued} robots still queued")]
    BudgetExhausted { pops: usize, queued: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
