use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("audio payload is empty")]
    EmptyAudio,

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("signal power is zero ({0})")]
    ZeroPower(&'static str),

    #[error("buffer of {len} samples is shorter than one window of {window}")]
    TooShort { len: usize, window: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },

    #[error("negative spectrogram entry at frame {frame}, channel {channel}")]
    NegativeFeature { frame: usize, channel: usize },

    #[error("non-binary spike value {value} at index {index}")]
    NonBinarySpike { index: usize, value: f64 },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "missing_file",
            Error::UnsupportedEncoding(_) => "unsupported_encoding",
            Error::EmptyAudio => "empty_audio",
            Error::NonFiniteSample(_) => "non_finite_sample",
            Error::SampleRateMismatch(..) => "sample_rate_mismatch",
            Error::ZeroPower(_) => "zero_power",
            Error::TooShort { .. } => "too_short",
            Error::Shape(_) => "shape_mismatch",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::NegativeFeature { .. } => "negative_feature",
            Error::NonBinarySpike { .. } => "non_binary_spike",
            Error::Constraint(_) => "constraint",
            Error::Diverged { .. } => "diverged",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Wav(_) => "wav",
        }
    }

    /// Field path associated with the error, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::InvalidArgument { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
