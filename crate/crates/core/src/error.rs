use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical divergence at iteration {iteration}: {what}")]
    NumericalDivergence { iteration: usize, what: String },
    #[error("channel evaluation failed: {0}")]
    ChannelEvaluation(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),
    #[error("invalid bit depth {0}; need at least 1 bit")]
    InvalidBitDepth(u32),
    #[error("cannot quantize NaN at component {0}")]
    QuantizeNaN(usize),
    #[error("forward model output is identically zero")]
    DegenerateSignal,
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("empty input")]
    EmptyInput,
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("iterative solver diverged: {0}")]
    DivergenceDetected(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
