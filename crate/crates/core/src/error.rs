use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    CorruptLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid split spec: {0}")]
    InvalidSplit(String),

    #[error("sample {sample_id}: token budget of {limit} cannot hold the prompt skeleton ({needed} tokens)")]
    BudgetExhausted {
        sample_id: String,
        limit: usize,
        needed: usize,
    },

    #[error("invalid token budget: {0}")]
    InvalidBudget(String),

    #[error("n_bits must be in 1..=8, got {0}")]
    BitsOutOfRange(u32),

    #[error("block_size must be at least 1")]
    ZeroBlockSize,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: weights have {expected} entries, gradient has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid optimizer hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("step {step} is past the end of the schedule ({total} steps)")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("cannot evaluate an empty set of pairs")]
    EmptyEvaluation,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
