use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed binary or text payload; `offset` is the byte (or line) where
    /// decoding stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
