//! Error type shared by all pipeline stages.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Structural damage in an input dump, reported with the byte offset of
    /// the offending row. Only raised in strict mode; the lenient default
    /// skips and counts instead.
    #[error("malformed dump row at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    /// Inconsistent or invalid data encountered after parsing (bad triples,
    /// missing snapshots, degenerate datasets).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// Corrupt or incompatible on-disk artifacts (bad magic, checksum
    /// mismatch, version skew).
    #[error("format error: {0}")]
    Format(String),
}

impl PipelineError {
    pub fn data(msg: impl Into<String>) -> Self {
        PipelineError::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        PipelineError::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
