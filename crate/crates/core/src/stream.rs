//! Token streams: the serialized form of an encoded series.
//!
//! A stream is a small header (format version, original sample count, pad
//! count) plus a flat id sequence laid out as four tokens per patch:
//! `[scale, level-0 code, level-1 code, level-2 code]`. Validity is fully
//! checkable without a model. The textual rendering is a header literal
//! `<ts_stream_v1_n{len}_p{pad}>` followed by one literal per token.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::series::PATCH_LEN;
use crate::vocab::{Token, VOCAB_LEVELS};

/// Current stream format version.
pub const STREAM_VERSION: u32 = 1;
/// Tokens emitted per patch: one scale plus one code per level.
pub const TOKENS_PER_PATCH: usize = 1 + VOCAB_LEVELS;

/// Framing metadata carried alongside the token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u32,
    /// Original (pre-padding) sample count.
    pub len: usize,
    /// Samples appended to fill the final patch; always `< PATCH_LEN`.
    pub pad: usize,
}

impl StreamHeader {
    /// Header for a series of `len` samples; pad is derived.
    pub fn for_len(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(CoreError::EmptyInput);
        }
        let pad = (PATCH_LEN - len % PATCH_LEN) % PATCH_LEN;
        Ok(Self {
            version: STREAM_VERSION,
            len,
            pad,
        })
    }

    pub fn patch_count(&self) -> usize {
        (self.len + self.pad) / PATCH_LEN
    }

    /// Expected number of token ids in the body.
    pub fn token_count(&self) -> usize {
        self.patch_count() * TOKENS_PER_PATCH
    }

    pub fn literal(&self) -> String {
        format!("<ts_stream_v{}_n{}_p{}>", self.version, self.len, self.pad)
    }

    pub fn from_literal(text: &str) -> Result<Self> {
        let bad = || CoreError::MalformedStream {
            reason: format!("bad header literal `{text}`"),
        };
        let inner = text
            .strip_prefix("<ts_stream_v")
            .and_then(|s| s.strip_suffix('>'))
            .ok_or_else(bad)?;
        let (version_text, rest) = inner.split_once("_n").ok_or_else(bad)?;
        let (len_text, pad_text) = rest.split_once("_p").ok_or_else(bad)?;
        let header = Self {
            version: version_text.parse().map_err(|_| bad())?,
            len: len_text.parse().map_err(|_| bad())?,
            pad: pad_text.parse().map_err(|_| bad())?,
        };
        if header.literal() != text {
            return Err(bad());
        }
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != STREAM_VERSION {
            return Err(CoreError::MalformedStream {
                reason: format!(
                    "unsupported stream version {} (expected {STREAM_VERSION})",
                    self.version
                ),
            });
        }
        if self.len == 0 {
            return Err(CoreError::malformed_stream("header declares zero length"));
        }
        let expected_pad = (PATCH_LEN - self.len % PATCH_LEN) % PATCH_LEN;
        if self.pad != expected_pad {
            return Err(CoreError::MalformedStream {
                reason: format!(
                    "pad {} inconsistent with length {} (expected {expected_pad})",
                    self.pad, self.len
                ),
            });
        }
        Ok(())
    }
}

/// An encoded series: header plus token ids, four per patch, scale first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub header: StreamHeader,
    pub tokens: Vec<u32>,
}

impl TokenStream {
    /// Empty stream for a series of `len` samples; fill with
    /// [`TokenStream::push_patch`].
    pub fn new(len: usize) -> Result<Self> {
        let header = StreamHeader::for_len(len)?;
        let tokens = Vec::with_capacity(header.token_count());
        Ok(Self { header, tokens })
    }

    /// Appends one patch's quadruple.
    pub fn push_patch(&mut self, scale_exp: i32, indices: &[usize]) -> Result<()> {
        if indices.len() != VOCAB_LEVELS {
            return Err(CoreError::ShapeMismatch {
                context: "stream push_patch".into(),
                expected: format!("{VOCAB_LEVELS} code indices"),
                got: format!("{}", indices.len()),
            });
        }
        if self.tokens.len() >= self.header.token_count() {
            return Err(CoreError::malformed_stream(
                "more patches than the header admits",
            ));
        }
        self.tokens.push(Token::scale(scale_exp)?.id());
        for (level, &index) in indices.iter().enumerate() {
            self.tokens.push(Token::code(level, index)?.id());
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        self.header.patch_count()
    }

    /// Structural validation: header consistency, token arity, id ranges,
    /// and the scale-first per-patch layout. Requires no model.
    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.tokens.len() != self.header.token_count() {
            return Err(CoreError::MalformedStream {
                reason: format!(
                    "token count {} does not match header ({} patches x {TOKENS_PER_PATCH})",
                    self.tokens.len(),
                    self.patch_count()
                ),
            });
        }
        for (offset, &id) in self.tokens.iter().enumerate() {
            let token = Token::from_id(id).ok_or(CoreError::InvalidTokenId { id, offset })?;
            let slot = offset % TOKENS_PER_PATCH;
            match (slot, token) {
                (0, Token::Scale(_)) => {}
                (s, Token::Code { level, .. }) if s == level + 1 => {}
                _ => {
                    return Err(CoreError::MalformedStream {
                        reason: format!(
                            "token at offset {offset} ({}) does not fit slot {slot} of the \
                             [scale, ts0, ts1, ts2] layout",
                            token.literal()
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Decodes the per-patch quadruples; the stream must be valid.
    pub fn patches(&self) -> Result<Vec<(i32, [usize; VOCAB_LEVELS])>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.patch_count());
        for chunk in self.tokens.chunks_exact(TOKENS_PER_PATCH) {
            let scale = match Token::from_id(chunk[0]) {
                Some(Token::Scale(exp)) => exp,
                _ => unreachable!("validated stream"),
            };
            let mut indices = [0usize; VOCAB_LEVELS];
            for (level, slot) in indices.iter_mut().zip(&chunk[1..]) {
                match Token::from_id(*slot) {
                    Some(Token::Code { index, .. }) => *level = index,
                    _ => unreachable!("validated stream"),
                }
            }
            out.push((scale, indices));
        }
        Ok(out)
    }

    /// Textual form: header literal then one literal per token, separated by
    /// single spaces.
    pub fn render_text(&self) -> String {
        let mut out = self.header.literal();
        for &id in &self.tokens {
            out.push(' ');
            // Ids are valid by construction; render raw ids defensively if not.
            match Token::from_id(id) {
                Some(token) => out.push_str(&token.literal()),
                None => out.push_str(&format!("<invalid_{id}>")),
            }
        }
        out
    }

    /// Parses the output of [`TokenStream::render_text`]; the result is
    /// validated, so `parse_text(render_text(s)) == s` for valid `s`.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut parts = text.split_whitespace();
        let header_text = parts
            .next()
            .ok_or_else(|| CoreError::malformed_stream("empty stream text"))?;
        let header = StreamHeader::from_literal(header_text)?;
        let mut tokens = Vec::with_capacity(header.token_count());
        for part in parts {
            tokens.push(Token::from_literal(part)?.id());
        }
        let stream = Self { header, tokens };
        stream.validate()?;
        Ok(stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample_stream() -> TokenStream {
        let mut s = TokenStream::new(128).unwrap();
        s.push_patch(-1, &[5, 0, 2047]).unwrap();
        s.push_patch(3, &[0, 1999, 7]).unwrap();
        s
    }

    #[test]
    fn header_math() {
        let h = StreamHeader::for_len(128).unwrap();
        assert_eq!((h.len, h.pad, h.patch_count(), h.token_count()), (128, 0, 2, 8));
        let h = StreamHeader::for_len(100).unwrap();
        assert_eq!((h.pad, h.patch_count()), (28, 2));
        let h = StreamHeader::for_len(1).unwrap();
        assert_eq!((h.pad, h.patch_count()), (63, 1));
        assert!(StreamHeader::for_len(0).is_err());
    }

    #[test]
    fn two_patch_series_gives_eight_tokens() {
        let s = sample_stream();
        assert_eq!(s.tokens.len(), 8);
        s.validate().unwrap();
    }

    #[test]
    fn first_token_of_each_quadruple_is_a_scale() {
        let s = sample_stream();
        for chunk in s.tokens.chunks_exact(TOKENS_PER_PATCH) {
            assert!(matches!(Token::from_id(chunk[0]), Some(Token::Scale(_))));
        }
    }

    #[test]
    fn patches_round_trip() {
        let s = sample_stream();
        let patches = s.patches().unwrap();
        assert_eq!(patches, vec![(-1, [5, 0, 2047]), (3, [0, 1999, 7])]);
    }

    #[test]
    fn push_patch_validates_inputs() {
        let mut s = TokenStream::new(64).unwrap();
        assert!(s.push_patch(0, &[0, 0]).is_err());
        assert!(s.push_patch(99, &[0, 0, 0]).is_err());
        assert!(s.push_patch(0, &[0, 0, 4096]).is_err());
        s.push_patch(0, &[0, 0, 0]).unwrap();
        // Header admits exactly one patch.
        assert!(s.push_patch(0, &[0, 0, 0]).is_err());
    }

    #[test]
    fn validate_rejects_wrong_count() {
        let mut s = sample_stream();
        s.tokens.pop();
        assert!(matches!(
            s.validate(),
            Err(CoreError::MalformedStream { .. })
        ));
    }

    #[test]
    fn validate_names_offset_of_invalid_id() {
        let mut s = sample_stream();
        s.tokens[5] = 60_000;
        match s.validate() {
            Err(CoreError::InvalidTokenId { id, offset }) => {
                assert_eq!((id, offset), (60_000, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_wrong_slot_kind() {
        let mut s = sample_stream();
        // Level-1 code where the scale should be.
        s.tokens[4] = Token::code(1, 9).unwrap().id();
        assert!(matches!(
            s.validate(),
            Err(CoreError::MalformedStream { .. })
        ));
        // Scale token in a code slot.
        let mut s = sample_stream();
        s.tokens[2] = Token::scale(0).unwrap().id();
        assert!(matches!(
            s.validate(),
            Err(CoreError::MalformedStream { .. })
        ));
        // Right kind, wrong level for the slot.
        let mut s = sample_stream();
        s.tokens[1] = Token::code(2, 3).unwrap().id();
        assert!(matches!(
            s.validate(),
            Err(CoreError::MalformedStream { .. })
        ));
    }

    #[test]
    fn validate_rejects_bad_header() {
        let mut s = sample_stream();
        s.header.version = 2;
        assert!(s.validate().is_err());
        let mut s = sample_stream();
        s.header.pad = 5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn header_literal_round_trip() {
        let h = StreamHeader::for_len(128).unwrap();
        assert_eq!(h.literal(), "<ts_stream_v1_n128_p0>");
        assert_eq!(StreamHeader::from_literal("<ts_stream_v1_n128_p0>").unwrap(), h);
        let h = StreamHeader::for_len(100).unwrap();
        assert_eq!(h.literal(), "<ts_stream_v1_n100_p28>");
        assert_eq!(StreamHeader::from_literal(&h.literal()).unwrap(), h);
        for bad in [
            "<ts_stream_v2_n128_p0>",
            "<ts_stream_v1_n128_p1>",
            "<ts_stream_v1_n0_p0>",
            "<ts_stream_v1_n128_p00>",
            "<ts_stream_128_0>",
            "",
        ] {
            assert!(StreamHeader::from_literal(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn text_round_trip() {
        let s = sample_stream();
        let text = s.render_text();
        assert!(text.starts_with("<ts_stream_v1_n128_p0> <ts_scale_-1> <ts_0_5> <ts_1_0> <ts_2_2047>"));
        let parsed = TokenStream::parse_text(&text).unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn parse_text_rejects_garbage() {
        assert!(TokenStream::parse_text("").is_err());
        assert!(TokenStream::parse_text("<ts_scale_0>").is_err());
        assert!(matches!(
            TokenStream::parse_text("<ts_stream_v1_n64_p0> <ts_scale_0> <ts_0_1> <ts_1_1> <bogus>"),
            Err(CoreError::UnknownTokenLiteral { .. })
        ));
        // Token count mismatch against the header.
        assert!(TokenStream::parse_text("<ts_stream_v1_n64_p0> <ts_scale_0>").is_err());
    }
}
