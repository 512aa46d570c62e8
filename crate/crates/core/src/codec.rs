//! End-to-end series <-> token-stream conversion: the trained tokenizer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::{Mlp, MlpConfig};
use crate::rvq::{Rvq, RvqConfig};
use crate::series::{patchify, unscale, Patch, Series, PATCH_LEN};
use crate::stream::TokenStream;
use crate::tensor::Tensor2D;
use crate::vocab::{LEVEL_TOKENS, VOCAB_LEVELS};

/// Encoder + residual quantizer + decoder. Streams produced by
/// [`Tokenizer::encode`] carry four tokens per patch, scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub rvq: Rvq,
}

impl Tokenizer {
    /// Default architecture (64 -> 128 encoder, 3x2048 codebooks, mirrored
    /// decoder) with seeded initialization. Codebooks are uninitialized until
    /// trained or loaded.
    pub fn init(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_configs(
            MlpConfig::encoder_default(),
            MlpConfig::decoder_default(),
            RvqConfig::default(),
            &mut rng,
        )
    }

    pub fn with_configs<R: rand::Rng>(
        encoder: MlpConfig,
        decoder: MlpConfig,
        rvq: RvqConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if encoder.output != rvq.dim || decoder.input != rvq.dim {
            return Err(CoreError::invalid_config(
                "encoder output, decoder input, and RVQ dim must agree",
            ));
        }
        if encoder.input != PATCH_LEN || decoder.output != PATCH_LEN {
            return Err(CoreError::invalid_config(
                "encoder input and decoder output must equal the patch length",
            ));
        }
        Ok(Self {
            encoder: Mlp::init(encoder, rng)?,
            decoder: Mlp::init(decoder, rng)?,
            rvq: Rvq::new(rvq)?,
        })
    }

    /// True once the codebooks have been initialized (trained or loaded).
    pub fn is_trained(&self) -> bool {
        self.rvq.initialized
    }

    /// Token streams require the full vocabulary layout: 3 levels of 2048.
    fn check_vocab_compat(&self) -> Result<()> {
        if self.rvq.config.levels != VOCAB_LEVELS
            || self.rvq.config.codes != LEVEL_TOKENS as usize
        {
            return Err(CoreError::InvalidConfig {
                reason: format!(
                    "stream tokens need {VOCAB_LEVELS} levels of {LEVEL_TOKENS} codes, model has \
                     {} of {}",
                    self.rvq.config.levels, self.rvq.config.codes
                ),
            });
        }
        Ok(())
    }

    /// Splits a series into patches, padding the trailing partial patch with
    /// the final sample value.
    pub fn patches(&self, series: &Series) -> Result<Vec<Patch>> {
        let pad_value = *series.values.last().ok_or(CoreError::EmptyInput)?;
        patchify(series, pad_value)
    }

    /// Encoder embeddings for a set of patches (rows = patches).
    pub fn embed(&self, patches: &[Patch]) -> Result<Tensor2D> {
        self.encoder.infer(&scaled_matrix(patches))
    }

    /// series -> patches -> scale -> encode -> quantize -> tokens.
    pub fn encode(&self, series: &Series) -> Result<TokenStream> {
        self.check_vocab_compat()?;
        if !self.is_trained() {
            return Err(CoreError::UninitializedCodebook);
        }
        let patches = self.patches(series)?;
        let embeddings = self.embed(&patches)?;
        let codes = self.rvq.quantize_batch(&embeddings)?;
        let mut stream = TokenStream::new(series.values.len())?;
        for (patch, code) in patches.iter().zip(codes.iter()) {
            stream.push_patch(patch.scale_exp, &code.indices)?;
        }
        Ok(stream)
    }

    /// tokens -> dequantize -> decode -> unscale -> samples, truncated to the
    /// header-declared length.
    pub fn decode(&self, stream: &TokenStream) -> Result<Vec<f64>> {
        self.check_vocab_compat()?;
        if !self.is_trained() {
            return Err(CoreError::UninitializedCodebook);
        }
        let patches = stream.patches()?;
        let mut embeddings = Tensor2D::zeros(patches.len(), self.rvq.config.dim);
        for (row, (_, indices)) in patches.iter().enumerate() {
            let e = self.rvq.dequantize(indices)?;
            embeddings.row_mut(row).copy_from_slice(&e);
        }
        let decoded = self.decoder.infer(&embeddings)?;
        let mut values = Vec::with_capacity(stream.header.len);
        for (row, (scale_exp, _)) in patches.iter().enumerate() {
            let mut scaled = [0.0f64; PATCH_LEN];
            scaled.copy_from_slice(decoded.row(row));
            values.extend_from_slice(&unscale(&scaled, *scale_exp)?);
        }
        values.truncate(stream.header.len);
        Ok(values)
    }

    /// Decode into a [`Series`] carrying the given id.
    pub fn decode_series(&self, stream: &TokenStream, id: &str) -> Result<Series> {
        Series::new(String::from(id), self.decode(stream)?)
    }

    /// decode(encode(series)): the model's reconstruction of a series.
    pub fn reconstruct(&self, series: &Series) -> Result<Vec<f64>> {
        self.decode(&self.encode(series)?)
    }
}

/// Stacks the scaled samples of each patch into a `[patches, PATCH_LEN]`
/// matrix: the network-facing representation.
pub fn scaled_matrix(patches: &[Patch]) -> Tensor2D {
    let mut m = Tensor2D::zeros(patches.len(), PATCH_LEN);
    for (row, patch) in patches.iter().enumerate() {
        m.row_mut(row).copy_from_slice(&patch.scaled);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Token;
    use rand::Rng;

    /// Tokenizer with random codebooks marked initialized: mechanically
    /// usable without training.
    fn mock_trained(seed: u64) -> Tokenizer {
        let mut tok = Tokenizer::init(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        for book in tok.rvq.books.iter_mut() {
            for code in 0..tok.rvq.config.codes {
                for d in 0..tok.rvq.config.dim {
                    book.vectors.set(code, d, rng.random::<f64>() * 0.2 - 0.1);
                }
            }
        }
        tok.rvq.initialized = true;
        tok
    }

    fn series(len: usize) -> Series {
        Series::new(
            String::from("s"),
            (0..len).map(|i| (i as f64 * 0.12).sin() * 3.0 + 0.4).collect(),
        )
        .unwrap()
    }

    #[test]
    fn untrained_encode_errors() {
        let tok = Tokenizer::init(1).unwrap();
        assert!(matches!(
            tok.encode(&series(64)),
            Err(CoreError::UninitializedCodebook)
        ));
    }

    #[test]
    fn two_patch_series_encodes_to_eight_tokens() {
        let tok = mock_trained(2);
        let stream = tok.encode(&series(128)).unwrap();
        assert_eq!(stream.tokens.len(), 8);
        stream.validate().unwrap();
    }

    #[test]
    fn scale_slot_carries_patch_scale() {
        let tok = mock_trained(3);
        // Amplitude ~3 -> max|x| in [2, 4) across patches; k in {1, 2}.
        let stream = tok.encode(&series(192)).unwrap();
        for chunk in stream.tokens.chunks_exact(4) {
            match Token::from_id(chunk[0]) {
                Some(Token::Scale(exp)) => assert!((1..=2).contains(&exp), "{exp}"),
                other => panic!("slot 0 not a scale: {other:?}"),
            }
        }
    }

    #[test]
    fn decode_truncates_to_original_length() {
        let tok = mock_trained(4);
        let s = series(100);
        let stream = tok.encode(&s).unwrap();
        assert_eq!(stream.header.pad, 28);
        let values = tok.decode(&stream).unwrap();
        assert_eq!(values.len(), 100);
        assert!(values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encode_decode_encode_is_stable_token_wise() {
        // With random (untrained) codebooks the reconstruction is poor, but
        // the token pipeline must still be deterministic end to end.
        let tok = mock_trained(5);
        let s = series(128);
        let a = tok.encode(&s).unwrap();
        let b = tok.encode(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruct_scales_with_input() {
        // Doubling the input by a power of two shifts only the scale tokens,
        // so the reconstruction doubles exactly.
        let tok = mock_trained(6);
        let s = series(64);
        let doubled = Series::new(
            String::from("s2"),
            s.values.iter().map(|v| v * 2.0).collect(),
        )
        .unwrap();
        let r1 = tok.reconstruct(&s).unwrap();
        let r2 = tok.reconstruct(&doubled).unwrap();
        for (a, b) in r1.iter().zip(r2.iter()) {
            assert_eq!(*b, *a * 2.0);
        }
    }

    #[test]
    fn mismatched_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad_rvq = RvqConfig {
            levels: 3,
            codes: 2048,
            dim: 64,
        };
        assert!(Tokenizer::with_configs(
            MlpConfig::encoder_default(),
            MlpConfig::decoder_default(),
            bad_rvq,
            &mut rng
        )
        .is_err());

        let small_rvq = RvqConfig {
            levels: 2,
            codes: 16,
            dim: 128,
        };
        let tok = Tokenizer::with_configs(
            MlpConfig::encoder_default(),
            MlpConfig::decoder_default(),
            small_rvq,
            &mut rng,
        );
        // Constructible for experiments, but stream encode refuses: the
        // vocabulary is fixed at 3 levels of 2048.
        let mut tok = tok.unwrap();
        tok.rvq.initialized = true;
        assert!(matches!(
            tok.encode(&series(64)),
            Err(CoreError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn decode_series_carries_id() {
        let tok = mock_trained(7);
        let stream = tok.encode(&series(64)).unwrap();
        let out = tok.decode_series(&stream, "rebuilt").unwrap();
        assert_eq!(out.id, "rebuilt");
        assert_eq!(out.values.len(), 64);
    }

    #[test]
    fn scaled_matrix_layout() {
        let s = series(128);
        let tok = mock_trained(8);
        let patches = tok.patches(&s).unwrap();
        let m = scaled_matrix(&patches);
        assert_eq!((m.rows(), m.cols()), (2, 64));
        assert_eq!(m.row(0), &patches[0].scaled[..]);
        assert_eq!(m.row(1), &patches[1].scaled[..]);
    }
}
