//! Error type shared across the workbench.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate tokenizer name '{0}'")]
    DuplicateTokenizer(String),
    #[error("duplicate task name '{0}'")]
    DuplicateTask(String),
    #[error("unknown tokenizer '{0}'")]
    UnknownTokenizer(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("local id {local} out of range for tokenizer '{tokenizer}' (size {size})")]
    LocalIdOutOfRange {
        tokenizer: String,
        local: u32,
        size: u32,
    },
    #[error("global id {global} out of range (vocabulary size {size})")]
    GlobalIdOutOfRange { global: u32, size: u32 },

    #[error("{file}:{line}: {msg}")]
    ParseLine {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("template '{template}': {msg}")]
    Template { template: String, msg: String },
    #[error("tokenize: {0}")]
    Tokenize(String),
    #[error("character {ch:?} at position {pos} is not in the tokenizer inventory")]
    OutOfInventory { ch: char, pos: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("missing item '{0}' in assembly input")]
    MissingItem(String),
    #[error("item '{item}' has {streams} streams but n_q is {n_q}")]
    StreamOverflow {
        item: String,
        streams: usize,
        n_q: usize,
    },
    #[error("no loss weight entry for '{0}'")]
    MissingWeight(String),

    #[error("missing index file for item '{item}' in {dir}")]
    MissingIndexFile { item: String, dir: PathBuf },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("vocabulary hash mismatch: '{a}' vs '{b}'")]
    VocabHashMismatch { a: String, b: String },
    #[error("dataset '{0}' has no examples")]
    EmptyDataset(String),

    #[error("model: {0}")]
    Model(String),
    #[error("non-finite loss at step {step} (batch: {tags})")]
    NonFiniteLoss { step: u64, tags: String },
    #[error("decode: {0}")]
    Decode(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
