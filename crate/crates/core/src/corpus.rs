//! Synthetic corpus generation and train/validation splitting.
//!
//! Six generator families cover the qualitative shapes the tokenizer must
//! handle: smooth periodic signals, trends, slowly mixing autoregressive
//! paths, random walks, discontinuous waves, and sparse spikes. Amplitudes
//! are drawn log-uniformly across many orders of magnitude so the power-of-2
//! scale quantizer sees its full range, including both clip boundaries.
//!
//! Family parameters are tuned so a 64-sample patch carries few effective
//! degrees of freedom: four discrete tokens can describe a smooth arc, a
//! ramp, or a spike position exactly, but not 64 independent samples, so
//! broadband-noise families would put an irreducible floor under the
//! reconstruction error no amount of training removes.
//!
//! Wandering families (AR, random walk, spikes) additionally fluctuate
//! around a nonzero mean level, and square/sawtooth transitions have finite
//! width. Both choices matter because reconstruction quality is judged by a
//! symmetric relative error (SMAPE) as well as MSE: samples that dwell at
//! zero make the relative error blow up no matter how small the absolute
//! error is, and instantaneous jumps alias against the sample grid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::series::{Series, PATCH_LEN};

/// Log10 amplitude bounds of the default corpus: 10^-6 .. 10^12, spanning 18
/// orders of magnitude (the scale clip range covers about 14).
pub const DEFAULT_AMP_LOG10: (f64, f64) = (-6.0, 12.0);
/// Default series length bounds (log-uniform).
pub const DEFAULT_LEN_RANGE: (usize, usize) = (256, 2048);
/// Default number of series in the desk-scale corpus.
pub const DEFAULT_SERIES: usize = 4000;

/// Generator family plus its kind-specific parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    /// Sum of `components` sines, frequencies drawn in a low per-patch band
    /// and weights decaying geometrically, normalized to the target
    /// amplitude.
    SineMix { components: (usize, usize) },
    /// Linear trend plus one seasonal sine.
    TrendSeasonal,
    /// AR(`order`) driven by unit Gaussian innovations, parameterized by its
    /// poles: each real pole has radius at most `coef_limit`, so any radius
    /// below 1 guarantees stationarity, radius 0 degenerates to white noise,
    /// and radii near 1 give smooth, slowly mixing paths. The path
    /// fluctuates around a random nonzero mean level.
    Ar { order: usize, coef_limit: f64 },
    /// Gaussian random walk, exponentially smoothed so drift structure
    /// dominates per-sample jitter, offset to a random nonzero mean level.
    RandomWalk,
    /// Square or sawtooth wave (chosen per series) with a random period and
    /// finite-width transitions.
    SquareSawtooth,
    /// Slow low-amplitude baseline around a nonzero level, with sparse
    /// large spikes at the given per-sample density.
    Spikes { density: (f64, f64) },
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::SineMix { .. } => "sine-mix",
            Kind::TrendSeasonal => "trend-seasonal",
            Kind::Ar { .. } => "ar",
            Kind::RandomWalk => "random-walk",
            Kind::SquareSawtooth => "square-sawtooth",
            Kind::Spikes { .. } => "spikes",
        }
    }

    /// The six default families with their default parameter ranges.
    pub fn default_set() -> [Kind; 6] {
        [
            Kind::SineMix { components: (1, 2) },
            Kind::TrendSeasonal,
            Kind::Ar {
                order: 2,
                coef_limit: 0.995,
            },
            Kind::RandomWalk,
            Kind::SquareSawtooth,
            Kind::Spikes {
                density: (0.001, 0.008),
            },
        ]
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kind::SineMix { components: (lo, hi) } if lo == 0 || lo > hi => Err(
                CoreError::invalid_config("sine-mix component range must be non-empty and >= 1"),
            ),
            Kind::Ar { order, coef_limit } if order == 0 || !(0.0..1.0).contains(&coef_limit) => {
                Err(CoreError::invalid_config(
                    "AR needs order >= 1 and coefficient limit in [0, 1)",
                ))
            }
            Kind::Spikes { density: (lo, hi) } if !(lo > 0.0 && lo <= hi && hi < 1.0) => Err(
                CoreError::invalid_config("spike density range must satisfy 0 < lo <= hi < 1"),
            ),
            _ => Ok(()),
        }
    }
}

/// Reproducible recipe for one family of synthetic series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub kind: Kind,
    /// Per-series amplitude `A = 10^U(lo, hi)`.
    pub amp_log10: (f64, f64),
    /// Measurement noise added as `A * noise * N(0,1)`.
    pub noise: f64,
    /// Series length drawn log-uniformly in `[lo, hi]`.
    pub len_range: (usize, usize),
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: Kind, seed: u64) -> Self {
        Self {
            kind,
            amp_log10: DEFAULT_AMP_LOG10,
            noise: 0.002,
            len_range: DEFAULT_LEN_RANGE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        let (alo, ahi) = self.amp_log10;
        if !(alo.is_finite() && ahi.is_finite() && alo <= ahi) {
            return Err(CoreError::invalid_config("amplitude range must be ordered and finite"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(CoreError::invalid_config("noise must be finite and >= 0"));
        }
        let (llo, lhi) = self.len_range;
        if llo == 0 || llo > lhi {
            return Err(CoreError::invalid_config("length range must be non-empty and >= 1"));
        }
        Ok(())
    }
}

/// Standard normal via Box-Muller.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.random::<f64>(); // (0, 1]: keeps the log finite
    let u2 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    libm::exp(rng.random::<f64>() * (libm::log(hi) - libm::log(lo)) + libm::log(lo))
}

/// Rescales `values` in place so `max |v| = amp`; all-zero input stays zero.
fn rescale_to_amp(values: &mut [f64], amp: f64) {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let k = amp / max;
        for v in values {
            *v *= k;
        }
    }
}

fn generate_one<R: Rng>(kind: Kind, len: usize, amp: f64, noise: f64, rng: &mut R) -> Vec<f64> {
    let mut values = match kind {
        Kind::SineMix { components: (lo, hi) } => {
            let n = rng.random_range(lo..=hi);
            // Frequencies are drawn as cycles per patch window (0.25 to 3):
            // every 64-sample view resolves the waveform instead of seeing
            // near-Nyquist oscillation. Later components carry geometrically
            // smaller weights, so the fundamental dominates, and a DC term
            // lifts many patches off the zero line.
            let dc = (rng.random::<f64>() * 2.0 - 1.0) * 0.75;
            let parts: Vec<(f64, f64, f64)> = (0..n)
                .map(|k| {
                    let weight = libm::pow(0.3, k as f64) * (0.5 + 0.5 * rng.random::<f64>());
                    let per_patch = log_uniform(rng, 0.25, 3.0);
                    let phase = rng.random::<f64>() * 2.0 * PI;
                    (weight, 2.0 * PI * per_patch / PATCH_LEN as f64, phase)
                })
                .collect();
            let total_weight: f64 =
                libm::fabs(dc) + parts.iter().map(|p| p.0).sum::<f64>();
            (0..len)
                .map(|t| {
                    let s: f64 = dc
                        + parts
                            .iter()
                            .map(|&(w, omega, phi)| w * libm::sin(omega * t as f64 + phi))
                            .sum::<f64>();
                    amp * s / total_weight
                })
                .collect()
        }
        Kind::TrendSeasonal => {
            let slope = (rng.random::<f64>() * 2.0 - 1.0) * 2.0 * amp / len as f64;
            let intercept = (rng.random::<f64>() * 2.0 - 1.0) * 0.5 * amp;
            let season_amp = rng.random::<f64>() * 0.5 * amp;
            // Cap the season at 4 cycles per patch window so the wave stays
            // resolvable, but never below 2 cycles over the whole series.
            let max_cycles = (len as f64 * 4.0 / PATCH_LEN as f64).clamp(2.0, 32.0);
            let omega = 2.0 * PI * log_uniform(rng, 2.0, max_cycles) / len as f64;
            let phase = rng.random::<f64>() * 2.0 * PI;
            (0..len)
                .map(|t| intercept + slope * t as f64 + season_amp * libm::sin(omega * t as f64 + phase))
                .collect()
        }
        Kind::Ar { order, coef_limit } => {
            // Build the AR polynomial as a product of real poles, each with
            // radius in [0.95, 1] * coef_limit. Radii below 1 guarantee
            // stationarity outright (no sum-of-coefficients shrinking), and
            // stacking poles near 1 rolls off high frequencies fast enough
            // that sample paths look smooth at patch scale.
            let mut poly = alloc::vec![1.0f64];
            for _ in 0..order {
                let r = coef_limit * (0.95 + 0.05 * rng.random::<f64>());
                poly.push(0.0);
                for i in (1..poly.len()).rev() {
                    poly[i] -= r * poly[i - 1];
                }
            }
            let coefs: Vec<f64> = poly[1..].iter().map(|c| -c).collect();
            // Burn past the start-up transient so every series is drawn from
            // (approximately) the stationary distribution.
            let burn_in = if coef_limit > 0.0 {
                (libm::ceil(6.0 / (1.0 - coef_limit)) as usize).min(4096)
            } else {
                0
            };
            let mut out = Vec::with_capacity(burn_in + len);
            for t in 0..burn_in + len {
                let mut x = normal(rng);
                for (i, &c) in coefs.iter().enumerate() {
                    if t > i {
                        x += c * out[t - 1 - i];
                    }
                }
                out.push(x);
            }
            out.drain(..burn_in);
            rescale_to_amp(&mut out, amp);
            // Fluctuate around a nonzero mean (the classic AR-about-a-mean
            // form): the dynamics read as structure on top of a level
            // rather than sign flips through zero.
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let mean = sign * (1.5 + 0.5 * rng.random::<f64>()) * amp;
            for v in &mut out {
                *v += mean;
            }
            out
        }
        Kind::RandomWalk => {
            // Exponential smoothing of the walk: the cumulative drift comes
            // through while per-sample jitter is attenuated by alpha.
            let alpha = 0.02 + 0.06 * rng.random::<f64>();
            let mut level = 0.0;
            let mut ema = 0.0;
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                level += normal(rng);
                ema += alpha * (level - ema);
                out.push(ema);
            }
            rescale_to_amp(&mut out, amp);
            // Start the walk from a nonzero launch level instead of zero.
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let start = sign * (1.5 + 0.5 * rng.random::<f64>()) * amp;
            for v in &mut out {
                *v += start;
            }
            out
        }
        Kind::SquareSawtooth => {
            // Long periods keep transitions rare: most patch windows see a
            // flat level or a single ramp segment. Transitions span a few
            // samples instead of jumping between adjacent ones, because a
            // finite-width edge has a position a decoder can place, while
            // an instantaneous edge aliases against the sample grid.
            let period = log_uniform(rng, 192.0, 1024.0);
            let phase = rng.random::<f64>() * period;
            let square = rng.random::<f64>() < 0.5;
            let width = 3.0 + 5.0 * rng.random::<f64>(); // transition width, samples
            if square {
                // tanh(sin/s) is a square wave whose edges take about
                // `width` samples: sin crosses zero with unit slope in
                // angle, and tanh saturates past |x| of a couple of `s`.
                let s = width * PI / period;
                (0..len)
                    .map(|t| {
                        let theta = 2.0 * PI * (t as f64 + phase) / period;
                        amp * libm::tanh(libm::sin(theta) / s)
                    })
                    .collect()
            } else {
                // Sawtooth with a finite retrace, function-generator style:
                // ramp up over most of the period, back down over `width`
                // samples.
                let retrace = (width / period).min(0.45);
                (0..len)
                    .map(|t| {
                        let pos = (t as f64 + phase) / period;
                        let frac = pos - libm::floor(pos);
                        if frac < 1.0 - retrace {
                            amp * (2.0 * frac / (1.0 - retrace) - 1.0)
                        } else {
                            amp * (1.0 - 2.0 * (frac - (1.0 - retrace)) / retrace)
                        }
                    })
                    .collect()
            }
        }
        Kind::Spikes { density: (lo, hi) } => {
            let density = rng.random_range(lo..=hi);
            // The baseline is a nonzero level plus a slow sine at 15%
            // amplitude: small next to the spikes, but structured, so
            // spike-free stretches are a learnable waveform away from zero
            // instead of a noise floor that patch scaling would blow up to
            // full amplitude.
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let level = sign * (0.45 + 0.25 * rng.random::<f64>()) * amp;
            let per_patch = log_uniform(rng, 0.1, 0.5);
            let omega = 2.0 * PI * per_patch / PATCH_LEN as f64;
            let phase = rng.random::<f64>() * 2.0 * PI;
            (0..len)
                .map(|t| {
                    let base = level + 0.15 * amp * libm::sin(omega * t as f64 + phase);
                    if rng.random::<f64>() < density {
                        let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                        base + sign * amp * (0.5 + rng.random::<f64>())
                    } else {
                        base
                    }
                })
                .collect()
        }
    };
    if noise > 0.0 {
        for v in &mut values {
            *v += amp * noise * normal(rng);
        }
    }
    values
}

/// Generates `n` reproducible series. Each series uses an independent RNG
/// stream, so the result does not depend on evaluation order.
pub fn generate(spec: &GeneratorSpec, n: usize) -> Result<Vec<Series>> {
    spec.validate()?;
    let (llo, lhi) = spec.len_range;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let len = libm::round(log_uniform(&mut rng, llo as f64, lhi as f64)) as usize;
        let len = len.clamp(llo, lhi);
        let amp = libm::exp2((rng.random::<f64>() * (spec.amp_log10.1 - spec.amp_log10.0)
            + spec.amp_log10.0)
            * core::f64::consts::LOG2_10);
        let values = generate_one(spec.kind, len, amp, spec.noise, &mut rng);
        let mut series = Series::new(format!("{}-{}-{i}", spec.kind.name(), spec.seed), values)?;
        series
            .meta
            .insert(String::from("kind"), String::from(spec.kind.name()));
        series
            .meta
            .insert(String::from("amp"), format!("{amp:e}"));
        out.push(series);
    }
    Ok(out)
}

/// The default desk-scale corpus: `n` series divided evenly across the six
/// default families (remainder to the first families).
pub fn default_corpus(seed: u64, n: usize) -> Result<Vec<Series>> {
    let kinds = Kind::default_set();
    let base = n / kinds.len();
    let extra = n % kinds.len();
    let mut out = Vec::with_capacity(n);
    for (i, kind) in kinds.iter().enumerate() {
        let count = base + usize::from(i < extra);
        // Distinct seed per family so streams never collide.
        let spec = GeneratorSpec::new(*kind, seed.wrapping_add(i as u64 * 0x9e37_79b9));
        out.extend(generate(&spec, count)?);
    }
    Ok(out)
}

/// Deterministic shuffle-split. `ratio` is the train fraction; the split is
/// exhaustive and disjoint.
pub fn split(corpus: Vec<Series>, ratio: f64, seed: u64) -> Result<(Vec<Series>, Vec<Series>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CoreError::invalid_config("split ratio must be in [0, 1]"));
    }
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = libm::round(ratio * corpus.len() as f64) as usize;
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(corpus.len() - n_train);
    let mut by_index: Vec<Option<Series>> = corpus.into_iter().map(Some).collect();
    for (pos, &idx) in indices.iter().enumerate() {
        let series = by_index[idx].take().expect("each index visited once");
        if pos < n_train {
            train.push(series);
        } else {
            val.push(series);
        }
    }
    Ok((train, val))
}

/// Repairs non-finite samples in place: interior gaps by linear
/// interpolation between the nearest finite neighbors, edges by copying the
/// nearest finite value. Errors when no sample is finite. Returns the number
/// of repaired samples.
pub fn repair_non_finite(values: &mut [f64]) -> Result<usize> {
    let n = values.len();
    if n == 0 {
        return Err(CoreError::EmptyInput);
    }
    if !values.iter().any(|v| v.is_finite()) {
        return Err(CoreError::non_finite("series with no finite samples"));
    }
    let mut repaired = 0;
    let mut i = 0;
    while i < n {
        if values[i].is_finite() {
            i += 1;
            continue;
        }
        let gap_start = i;
        let mut gap_end = i;
        while gap_end < n && !values[gap_end].is_finite() {
            gap_end += 1;
        }
        let left = gap_start.checked_sub(1).map(|j| values[j]);
        let right = (gap_end < n).then(|| values[gap_end]);
        match (left, right) {
            (Some(a), Some(b)) => {
                let span = (gap_end - gap_start + 1) as f64;
                for (step, v) in values[gap_start..gap_end].iter_mut().enumerate() {
                    *v = a + (b - a) * (step + 1) as f64 / span;
                }
            }
            (Some(a), None) => values[gap_start..gap_end].fill(a),
            (None, Some(b)) => values[gap_start..gap_end].fill(b),
            (None, None) => unreachable!("at least one finite sample exists"),
        }
        repaired += gap_end - gap_start;
        i = gap_end;
    }
    Ok(repaired)
}
