use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced across the toolkit.
///
/// Variants are grouped loosely by the stage that raises them; [`Error::kind`]
/// collapses them into the three classes the CLI maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("empty buffer")]
    EmptyBuffer,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    RateMismatch { left: u32, right: u32 },
    #[error("invalid attack parameters: {0}")]
    InvalidAttackParams(String),
    #[error("audio too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid frequency range: {0}")]
    InvalidRange(String),
    #[error("invalid watermark spec: {0}")]
    InvalidSpec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("need at least one clean and one watermarked score")]
    DegenerateLabels,
    #[error("group {0:?} has no scores")]
    EmptyGroup(String),
    #[error("reference signal is identically zero")]
    ZeroReference,
    #[error("label sets differ")]
    LabelMismatch,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("corpus yields {got} distinct frames, need {needed}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("token {token} outside codebook of size {size}")]
    InvalidToken { token: u32, size: usize },
    #[error("empty token corpus")]
    EmptyCorpus,
    #[error("prompt has {got} tokens, model of order {order} needs {needed}")]
    PromptTooShort { got: usize, needed: usize, order: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("missing file {file} (row {row})")]
    MissingFile { file: PathBuf, row: usize },
    #[error("bad csv: {0}")]
    BadCsv(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for exit-code mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data, bad configuration, or failed validation.
    Data,
    /// A numerical routine did not produce a usable answer.
    Numeric,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NumericalFailure(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::BadCsv(e.to_string())
    }
}
