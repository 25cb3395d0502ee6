use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid confusion set: {0}")]
    InvalidConfusionSet(String),

    #[error("invalid token {0:?}")]
    InvalidToken(String),

    #[error("sentence {0} has no target index")]
    MissingTarget(String),

    #[error("sentence {0} has no L1 rendering")]
    MissingL1(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("need at least {needed} samples, got {available}")]
    TooFewSamples { needed: usize, available: usize },

    #[error("corpus supplies {available} negative candidates, {needed} required")]
    NotEnoughNegatives { needed: usize, available: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("parallel pair {0} has an empty side")]
    EmptyPair(usize),

    #[error("no usage model for word {0:?}")]
    MissingModel(String),

    #[error("missing fitness entry for sentence {sentence} under word {word:?}")]
    MissingEntry { sentence: String, word: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported {kind} file version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
