//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed bitstream or container file. `offset` is the byte offset at
    /// which the problem was detected, when known.
    #[error("format error{}: {msg}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format { offset: Option<u64>, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Stable machine-parsable code, used by the CLI's single-line error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "SC-INPUT",
            Error::ConfigMismatch(_) => "SC-CONFIG-MISMATCH",
            Error::Parse { .. } => "SC-PARSE",
            Error::Shape(_) => "SC-SHAPE",
            Error::Numerical(_) => "SC-NUM",
            Error::InsufficientData(_) => "SC-DATA",
            Error::Format { .. } => "SC-FORMAT",
            Error::Config(_) => "SC-CONFIG",
            Error::Io(_) => "SC-IO",
            Error::Tensor(_) => "SC-TENSOR",
            Error::Wav(_) => "SC-WAV",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
