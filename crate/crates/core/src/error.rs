//! Error type shared by the core algorithms.

use alloc::string::String;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CoreError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    #[error("scale exponent {exp} outside [{min}, {max}]", min = crate::SCALE_EXP_MIN, max = crate::SCALE_EXP_MAX)]
    ScaleExpOutOfRange { exp: i32 },
    #[error("codebook not initialized")]
    UninitializedCodebook,
    #[error("code index {index} out of range for codebook of {size} at level {level}")]
    CodeIndexOutOfRange {
        level: usize,
        index: usize,
        size: usize,
    },
    #[error("invalid token id {id} at offset {offset}")]
    InvalidTokenId { id: u32, offset: usize },
    #[error("malformed token stream: {reason}")]
    MalformedStream { reason: String },
    #[error("unknown token literal `{literal}`")]
    UnknownTokenLiteral { literal: String },
    #[error("flat in-sample")]
    FlatInsample,
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
}

impl CoreError {
    pub fn non_finite(context: &str) -> Self {
        CoreError::NonFinite {
            context: String::from(context),
        }
    }

    pub fn malformed_stream(reason: &str) -> Self {
        CoreError::MalformedStream {
            reason: String::from(reason),
        }
    }

    pub fn invalid_config(reason: &str) -> Self {
        CoreError::InvalidConfig {
            reason: String::from(reason),
        }
    }
}

pub type Result<T> = core::result::Result<T, CoreError>;
