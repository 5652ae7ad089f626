use std::io;

use thiserror::Error;
use trimsketch::SketchError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

impl HarnessError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        HarnessError::Parse { line, message: message.into() }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        HarnessError::Invalid { what, reason: reason.into() }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
