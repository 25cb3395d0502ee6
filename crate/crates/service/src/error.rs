use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown confusion set {0:?}")]
    UnknownSet(String),
    #[error("word {word:?} is not part of set {set:?}")]
    UnknownWord { set: String, word: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not trained: {0}")]
    NotTrained(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("word {lemma:?}: {source}")]
    Word {
        lemma: String,
        #[source]
        source: clarify_core::Error,
    },
    #[error(transparent)]
    Core(#[from] clarify_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit status for the CLI: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
