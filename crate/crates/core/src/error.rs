//! Crate-wide error type.

use crate::filterbank::fit::FitTraceRow;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav file: {0}")]
    WavFormat(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("waveform contains no samples")]
    EmptyWaveform,

    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("metadata parse error at line {line}: {message}")]
    MetadataParse { line: usize, message: String },

    #[error("value out of range at line {line}: {message}")]
    ValueRange { line: usize, message: String },

    #[error("duplicate (frame, class, track) row at line {line}")]
    DuplicateRow { line: usize },

    #[error("invalid scene spec: {0}")]
    InvalidScene(String),

    #[error("shape error: {0}")]
    InvalidShape(String),

    #[error("constraint violated: {0}")]
    InvalidConstraint(String),

    #[error("domain error: {0}")]
    InvalidDomain(String),

    #[error("training diverged at iteration {iteration}")]
    TrainingDiverged {
        iteration: usize,
        trace: Vec<FitTraceRow>,
    },

    #[error("result undefined: {0}")]
    Undefined(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
