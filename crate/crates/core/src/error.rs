use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("hidden size {hidden} is not divisible by {heads} attention heads")]
    HeadsNotDivisible { hidden: usize, heads: usize },
    #[error("loss must be a scalar, got shape {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("invalid interval [{start}, {end}] for duration {duration}")]
    InvalidInterval { start: f64, end: f64, duration: f64 },
    #[error("event vector has no set bits")]
    NoEvent,
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error("caption is empty")]
    EmptyCaption,
    #[error("event sequence is empty")]
    EmptySequence,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{what} of {got} exceeds the configured maximum {max}")]
    Overflow { what: &'static str, got: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {value} at step {step} ({task})")]
    NonFiniteLoss { step: usize, task: &'static str, value: f64 },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("video {0} is not present in the references")]
    UnknownVideo(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}
