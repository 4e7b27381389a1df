use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("corrupt wav: {0}")]
    CorruptWav(String),
    #[error("spec arity: {0}")]
    SpecArity(String),
    #[error("channel out of range: index {index} with {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },
    #[error("filterbank degenerate: mel band {band} covers no FFT bin")]
    FilterbankDegenerate { band: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no source channel: every channel is an overwrite target")]
    NoSourceChannel,
    #[error("no donor channel: every channel is missing")]
    NoDonorChannel,
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("empty training set: no clips outside evaluation fold {0}")]
    EmptyTrainingSet(u8),
    #[error("empty confusion matrix")]
    EmptyConfusion,
    #[error("invalid plan: {0}")]
    Plan(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
