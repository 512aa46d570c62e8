//! Token vocabulary: the fixed id layout for scale tokens and per-level code
//! tokens, plus the textual surface forms.
//!
//! Layout (all ranges disjoint, so an id alone identifies its kind):
//!
//! | ids          | meaning                          | literal           |
//! |--------------|----------------------------------|-------------------|
//! | 0..=46       | scale exponents -10..=36         | `<ts_scale_K>`    |
//! | 47..=2094    | level-0 code indices 0..=2047    | `<ts_0_J>`        |
//! | 2095..=4142  | level-1 code indices 0..=2047    | `<ts_1_J>`        |
//! | 4143..=6190  | level-2 code indices 0..=2047    | `<ts_2_J>`        |
//!
//! Ids from [`RESERVED_BASE`] upward are reserved for framing and never
//! appear in a token stream body.

use alloc::format;
use alloc::string::{String, ToString};

use crate::error::{CoreError, Result};
use crate::series::{SCALE_EXP_MAX, SCALE_EXP_MIN};

/// Number of scale tokens: one per exponent in `-10..=36`.
pub const SCALE_TOKENS: u32 = (SCALE_EXP_MAX - SCALE_EXP_MIN + 1) as u32;
/// Quantization levels in the vocabulary.
pub const VOCAB_LEVELS: usize = 3;
/// Code tokens per level.
pub const LEVEL_TOKENS: u32 = 2048;
/// First id of each level's range.
pub const LEVEL_BASE: [u32; VOCAB_LEVELS] = [
    SCALE_TOKENS,
    SCALE_TOKENS + LEVEL_TOKENS,
    SCALE_TOKENS + 2 * LEVEL_TOKENS,
];
/// Total content ids: 47 + 3 * 2048 = 6191.
pub const VOCAB_SIZE: u32 = SCALE_TOKENS + VOCAB_LEVELS as u32 * LEVEL_TOKENS;
/// First id reserved for framing/header use outside the content vocabulary.
pub const RESERVED_BASE: u32 = VOCAB_SIZE;

/// A decoded vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    /// Patch scale exponent in `-10..=36`.
    Scale(i32),
    /// Code index at one quantization level.
    Code { level: usize, index: usize },
}

impl Token {
    /// Validated scale-token constructor.
    pub fn scale(exp: i32) -> Result<Self> {
        if !(SCALE_EXP_MIN..=SCALE_EXP_MAX).contains(&exp) {
            return Err(CoreError::ScaleExpOutOfRange { exp });
        }
        Ok(Token::Scale(exp))
    }

    /// Validated code-token constructor.
    pub fn code(level: usize, index: usize) -> Result<Self> {
        if level >= VOCAB_LEVELS {
            return Err(CoreError::invalid_config("token level must be 0, 1, or 2"));
        }
        if index >= LEVEL_TOKENS as usize {
            return Err(CoreError::CodeIndexOutOfRange {
                level,
                index,
                size: LEVEL_TOKENS as usize,
            });
        }
        Ok(Token::Code { level, index })
    }

    /// The token's id in the flat vocabulary.
    pub fn id(self) -> u32 {
        match self {
            Token::Scale(exp) => (exp - SCALE_EXP_MIN) as u32,
            Token::Code { level, index } => LEVEL_BASE[level] + index as u32,
        }
    }

    /// Inverse of [`Token::id`]; `None` when the id is outside the content
    /// vocabulary.
    pub fn from_id(id: u32) -> Option<Self> {
        if id < SCALE_TOKENS {
            Some(Token::Scale(id as i32 + SCALE_EXP_MIN))
        } else if id < VOCAB_SIZE {
            let rel = id - SCALE_TOKENS;
            let level = (rel / LEVEL_TOKENS) as usize;
            let index = (rel % LEVEL_TOKENS) as usize;
            Some(Token::Code { level, index })
        } else {
            None
        }
    }

    /// Surface form: `<ts_scale_K>` or `<ts_L_J>`.
    pub fn literal(self) -> String {
        match self {
            Token::Scale(exp) => format!("<ts_scale_{exp}>"),
            Token::Code { level, index } => format!("<ts_{level}_{index}>"),
        }
    }

    /// Parses a surface form produced by [`Token::literal`].
    pub fn from_literal(text: &str) -> Result<Self> {
        let unknown = || CoreError::UnknownTokenLiteral {
            literal: text.to_string(),
        };
        let inner = text
            .strip_prefix('<')
            .and_then(|s| s.strip_suffix('>'))
            .and_then(|s| s.strip_prefix("ts_"))
            .ok_or_else(unknown)?;
        if let Some(exp_text) = inner.strip_prefix("scale_") {
            let exp: i32 = exp_text.parse().map_err(|_| unknown())?;
            let token = Token::scale(exp).map_err(|_| unknown())?;
            if token.literal() != text {
                return Err(unknown());
            }
            return Ok(token);
        }
        let (level_text, index_text) = inner.split_once('_').ok_or_else(unknown)?;
        let level: usize = level_text.parse().map_err(|_| unknown())?;
        let index: usize = index_text.parse().map_err(|_| unknown())?;
        // Reject non-canonical spellings such as leading zeros or `+`.
        let token = Token::code(level, index).map_err(|_| unknown())?;
        if token.literal() != text {
            return Err(unknown());
        }
        Ok(token)
    }
}
