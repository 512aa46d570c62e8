//! Patch extraction and power-of-2 scale quantization for univariate series.
//!
//! A series is cut into non-overlapping 64-sample patches. Each patch is
//! normalized by a per-patch power-of-2 scale factor `2^k` chosen so that the
//! largest absolute value lands in `[2^-0.5, 2^0.5)`. The exponent `k` is
//! clipped to `[-10, 36]`, which keeps the scale vocabulary finite, and the
//! division by an exact power of two is lossless in binary floating point.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Number of samples per patch.
pub const PATCH_LEN: usize = 64;
/// Lower clip bound for the scale exponent (scale `2^-10`).
pub const SCALE_EXP_MIN: i32 = -10;
/// Upper clip bound for the scale exponent (scale `2^36`).
pub const SCALE_EXP_MAX: i32 = 36;

/// A univariate time series with an identifier and optional metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    pub values: Vec<f64>,
    pub meta: BTreeMap<String, String>,
}

impl Series {
    /// Builds a series, validating that it is non-empty and all-finite.
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::non_finite("series values"));
        }
        Ok(Self {
            id: id.into(),
            values,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of 64-sample patches this series tokenizes into.
    pub fn patch_count(&self) -> usize {
        self.values.len().div_ceil(PATCH_LEN)
    }

    /// Samples appended to the last patch to fill it to 64.
    pub fn pad_count(&self) -> usize {
        (PATCH_LEN - self.values.len() % PATCH_LEN) % PATCH_LEN
    }
}

/// A fixed 64-sample window with its quantized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Raw samples, including any padding.
    pub samples: [f64; PATCH_LEN],
    /// Power-of-2 scale exponent, in `[-10, 36]`.
    pub scale_exp: i32,
    /// `samples / 2^scale_exp`, elementwise.
    pub scaled: [f64; PATCH_LEN],
}

impl Patch {
    /// Scales a raw 64-sample window.
    pub fn from_samples(samples: [f64; PATCH_LEN]) -> Result<Self> {
        let scale_exp = compute_scale(&samples)?;
        let scaled = apply_scale(&samples, scale_exp)?;
        Ok(Self {
            samples,
            scale_exp,
            scaled,
        })
    }

    /// Rebuilds a patch from its scaled representation and exponent.
    pub fn from_scaled(scaled: [f64; PATCH_LEN], scale_exp: i32) -> Result<Self> {
        let samples = unscale(&scaled, scale_exp)?;
        Ok(Self {
            samples,
            scale_exp,
            scaled,
        })
    }
}

/// Rounds to the nearest integer with halves toward +inf.
fn round_half_up(v: f64) -> f64 {
    libm::floor(v + 0.5)
}

/// Computes the quantized scale exponent for a window of samples.
///
/// `k = clamp(round(log2(max_i |x_i|)), -10, 36)`, ties rounding half-up.
/// An all-zero (or subnormal) window takes the clip floor `k = -10`, which
/// avoids a special NaN path and keeps the scale vocabulary closed.
pub fn compute_scale(samples: &[f64]) -> Result<i32> {
    let mut max_abs = 0.0f64;
    for &x in samples {
        if !x.is_finite() {
            return Err(CoreError::non_finite("compute_scale input"));
        }
        let a = libm::fabs(x);
        if a > max_abs {
            max_abs = a;
        }
    }
    if max_abs == 0.0 {
        return Ok(SCALE_EXP_MIN);
    }
    let k = round_half_up(libm::log2(max_abs));
    Ok((k as i32).clamp(SCALE_EXP_MIN, SCALE_EXP_MAX))
}

fn check_exp(k: i32) -> Result<()> {
    if !(SCALE_EXP_MIN..=SCALE_EXP_MAX).contains(&k) {
        return Err(CoreError::ScaleExpOutOfRange { exp: k });
    }
    Ok(())
}

/// Divides each sample by `2^k`. Exact for non-over/underflowing values.
pub fn apply_scale(samples: &[f64; PATCH_LEN], k: i32) -> Result<[f64; PATCH_LEN]> {
    check_exp(k)?;
    let factor = libm::exp2(-k as f64);
    let mut out = [0.0f64; PATCH_LEN];
    for (o, &x) in out.iter_mut().zip(samples.iter()) {
        *o = x * factor;
    }
    Ok(out)
}

/// Multiplies each sample by `2^k`, inverting [`apply_scale`] bit-exactly.
pub fn unscale(scaled: &[f64; PATCH_LEN], k: i32) -> Result<[f64; PATCH_LEN]> {
    check_exp(k)?;
    let factor = libm::exp2(k as f64);
    let mut out = [0.0f64; PATCH_LEN];
    for (o, &x) in out.iter_mut().zip(scaled.iter()) {
        *o = x * factor;
    }
    Ok(out)
}

/// Splits a series into scaled patches, right-padding the last window.
///
/// Returns `ceil(n/64)` patches in order. The number of padding samples is
/// `series.pad_count()`; the caller records it so decoding can truncate.
pub fn patchify(series: &Series, pad_value: f64) -> Result<Vec<Patch>> {
    if series.values.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let mut patches = Vec::with_capacity(series.patch_count());
    for chunk in series.values.chunks(PATCH_LEN) {
        let mut samples = [pad_value; PATCH_LEN];
        samples[..chunk.len()].copy_from_slice(chunk);
        patches.push(Patch::from_samples(samples)?);
    }
    Ok(patches)
}
