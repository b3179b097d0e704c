use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("word `{0}` is outside the cipher domain")]
    OutsideCipher(String),

    #[error("link {src}-{tgt} out of range for sentence {sentence} ({src_len} x {tgt_len})")]
    LinkOutOfRange {
        sentence: usize,
        src: usize,
        tgt: usize,
        src_len: usize,
        tgt_len: usize,
    },

    #[error("checkpoint: {message} (at byte offset {offset})")]
    Checkpoint { offset: usize, message: String },

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("stage `{stage}` failed for seed {seed}: {source}")]
    Stage {
        stage: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
