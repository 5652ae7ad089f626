use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("coordinate {index} is outside the universe [0, {universe})")]
    IndexOutOfRange { index: u64, universe: u64 },

    #[error("counter overflow at row {row}, bucket {bucket}")]
    CounterOverflow { row: usize, bucket: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cannot merge sketches: {0}")]
    Incompatible(String),

    #[error("magnitude must be positive, got {0}")]
    NonPositiveMagnitude(f64),

    #[error("malformed serialized sketch: {0}")]
    Decode(String),
}

impl SketchError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        SketchError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = SketchError> = std::result::Result<T, E>;
