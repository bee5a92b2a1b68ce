use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("schema version mismatch: found {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("extraction error: {0}")]
    Extract(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("training error: {0}")]
    Train(String),
    #[error("unknown key: {0}")]
    Key(String),
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("missing prerequisite: {reason} (run `{stage}` first)")]
    Dependency { stage: String, reason: String },
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure_dims {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::Dim(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_dims;
