use thiserror::Error;

use crate::corpus::CorpusError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("step {t} outside 0..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("span {start}:{end} outside prefix of {prefix_len} tokens")]
    SpanOutsidePrefix {
        start: usize,
        end: usize,
        prefix_len: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
