//! Residual vector quantization: maps an embedding to one code index per
//! level, where each level quantizes the residual left by the previous
//! levels. Includes codebook maintenance: k-means initialization, EMA vector
//! updates, and dead-code expiration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor2D;

/// Default number of quantization levels.
pub const NUM_LEVELS: usize = 3;
/// Default codebook size per level.
pub const CODES_PER_LEVEL: usize = 2048;
/// Default embedding dimensionality.
pub const EMBED_DIM: usize = 128;

/// Smoothing constant in the EMA vector refresh `sum / (count + EPS)`.
pub const EMA_EPS: f64 = 1e-5;
/// Default EMA decay for codebook statistics.
pub const EMA_DECAY: f64 = 0.99;
/// Batches a code may go unused before expiration replaces it.
pub const DEAD_CODE_THRESHOLD: u32 = 64;
/// Lloyd iteration cap during k-means initialization.
pub const KMEANS_MAX_ITERS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RvqConfig {
    pub levels: usize,
    pub codes: usize,
    pub dim: usize,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self {
            levels: NUM_LEVELS,
            codes: CODES_PER_LEVEL,
            dim: EMBED_DIM,
        }
    }
}

impl RvqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.codes == 0 || self.dim == 0 {
            return Err(CoreError::invalid_config(
                "RVQ levels, codes, and dim must be > 0",
            ));
        }
        Ok(())
    }
}

/// One level's code vectors plus the usage statistics that drive EMA updates
/// and dead-code expiration.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub level: usize,
    /// `[codes, dim]` code vectors.
    pub vectors: Tensor2D,
    /// EMA of per-code assignment counts (also the "usage" signal).
    pub usage_ema: Vec<f64>,
    /// EMA of per-code assigned-residual sums, `[codes, dim]`.
    pub sum_ema: Tensor2D,
    /// Whole batches since each code was last assigned.
    pub steps_since_use: Vec<u32>,
}

impl Codebook {
    fn new(level: usize, codes: usize, dim: usize) -> Self {
        Self {
            level,
            vectors: Tensor2D::zeros(codes, dim),
            usage_ema: vec![0.0; codes],
            sum_ema: Tensor2D::zeros(codes, dim),
            steps_since_use: vec![0; codes],
        }
    }

    /// Installs `vector` at `code` as if it had just been assigned once.
    fn seed_code(&mut self, code: usize, vector: &[f64]) {
        self.vectors.row_mut(code).copy_from_slice(vector);
        self.sum_ema.row_mut(code).copy_from_slice(vector);
        self.usage_ema[code] = 1.0;
        self.steps_since_use[code] = 0;
    }
}

/// Result of quantizing one embedding: the per-level indices, the decoded
/// point (sum of the selected code vectors), and the residual norm remaining
/// after each level.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCode {
    pub indices: Vec<usize>,
    pub quantized: Vec<f64>,
    /// `residual_norms[l]` = Euclidean norm of the residual after level `l`
    /// has been subtracted; the last entry is the final quantization error.
    pub residual_norms: Vec<f64>,
}

/// Per-level report from [`Rvq::kmeans_init`].
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansLevelReport {
    pub level: usize,
    /// True when there were too few samples and random-sample init was used.
    pub fallback: bool,
    pub iterations: usize,
    /// Mean squared distance of samples to their centers after init.
    pub inertia: f64,
}

/// The full residual quantizer: one codebook per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Rvq {
    pub config: RvqConfig,
    pub books: Vec<Codebook>,
    /// Set by [`Rvq::kmeans_init`] (or checkpoint load). Quantization before
    /// initialization is an error.
    pub initialized: bool,
}

/// Index of the nearest code row to `target` by squared Euclidean distance.
/// Ties resolve to the lowest index (strict `<` keeps the earliest minimum).
fn nearest_code(vectors: &Tensor2D, target: &[f64]) -> (usize, f64) {
    debug_assert_eq!(vectors.cols(), target.len());
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for j in 0..vectors.rows() {
        let row = vectors.row(j);
        let mut acc = 0.0;
        for (a, b) in target.iter().zip(row.iter()) {
            let diff = a - b;
            acc += diff * diff;
        }
        if acc < best_d {
            best_d = acc;
            best = j;
        }
    }
    (best, best_d)
}

impl Rvq {
    pub fn new(config: RvqConfig) -> Result<Self> {
        config.validate()?;
        let books = (0..config.levels)
            .map(|l| Codebook::new(l, config.codes, config.dim))
            .collect();
        Ok(Self {
            config,
            books,
            initialized: false,
        })
    }

    fn check_dim(&self, len: usize, context: &str) -> Result<()> {
        if len != self.config.dim {
            return Err(CoreError::ShapeMismatch {
                context: context.into(),
                expected: format!("{} dims", self.config.dim),
                got: format!("{len} dims"),
            });
        }
        Ok(())
    }

    /// Sequentially quantizes `embedding`: level `l` picks the code nearest
    /// to the residual left by levels `0..l`.
    pub fn quantize(&self, embedding: &[f64]) -> Result<RvqCode> {
        if !self.initialized {
            return Err(CoreError::UninitializedCodebook);
        }
        self.check_dim(embedding.len(), "rvq quantize")?;
        let mut residual = embedding.to_vec();
        let mut indices = Vec::with_capacity(self.config.levels);
        let mut quantized = vec![0.0; self.config.dim];
        let mut residual_norms = Vec::with_capacity(self.config.levels);
        for book in &self.books {
            let (idx, _) = nearest_code(&book.vectors, &residual);
            let code = book.vectors.row(idx);
            let mut norm_sq = 0.0;
            for ((r, &c), q) in residual.iter_mut().zip(code.iter()).zip(quantized.iter_mut()) {
                *r -= c;
                *q += c;
                norm_sq += *r * *r;
            }
            indices.push(idx);
            residual_norms.push(libm::sqrt(norm_sq));
        }
        Ok(RvqCode {
            indices,
            quantized,
            residual_norms,
        })
    }

    /// Quantizes each row of `embeddings`.
    pub fn quantize_batch(&self, embeddings: &Tensor2D) -> Result<Vec<RvqCode>> {
        (0..embeddings.rows())
            .map(|r| self.quantize(embeddings.row(r)))
            .collect()
    }

    /// Sum of the selected code vectors.
    pub fn dequantize(&self, indices: &[usize]) -> Result<Vec<f64>> {
        if indices.len() != self.config.levels {
            return Err(CoreError::ShapeMismatch {
                context: "rvq dequantize".into(),
                expected: format!("{} indices", self.config.levels),
                got: format!("{} indices", indices.len()),
            });
        }
        let mut out = vec![0.0; self.config.dim];
        for (book, &idx) in self.books.iter().zip(indices.iter()) {
            if idx >= self.config.codes {
                return Err(CoreError::CodeIndexOutOfRange {
                    level: book.level,
                    index: idx,
                    size: self.config.codes,
                });
            }
            for (o, &c) in out.iter_mut().zip(book.vectors.row(idx).iter()) {
                *o += c;
            }
        }
        Ok(out)
    }

    /// Initializes every level by clustering that level's residuals:
    /// k-means++ seeding plus at most [`KMEANS_MAX_ITERS`] Lloyd iterations.
    /// With fewer samples than codes, falls back to random-sample init and
    /// flags it in the report.
    pub fn kmeans_init<R: Rng>(
        &mut self,
        samples: &Tensor2D,
        rng: &mut R,
    ) -> Result<Vec<KmeansLevelReport>> {
        if samples.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        self.check_dim(samples.cols(), "rvq kmeans_init")?;
        let mut residuals = samples.clone();
        let mut reports = Vec::with_capacity(self.config.levels);
        for level in 0..self.config.levels {
            let fallback = residuals.rows() < self.config.codes;
            let (centers, iterations, inertia) = if fallback {
                (random_sample_init(&residuals, self.config.codes, rng), 0, f64::NAN)
            } else {
                kmeans(&residuals, self.config.codes, KMEANS_MAX_ITERS, rng)
            };
            let book = &mut self.books[level];
            for j in 0..self.config.codes {
                book.seed_code(j, centers.row(j));
            }
            reports.push(KmeansLevelReport {
                level,
                fallback,
                iterations,
                inertia,
            });
            // Propagate residuals for the next level using the fresh codes.
            if level + 1 < self.config.levels {
                let vectors = &self.books[level].vectors;
                for r in 0..residuals.rows() {
                    let (idx, _) = nearest_code(vectors, residuals.row(r));
                    let code_row: Vec<f64> = vectors.row(idx).to_vec();
                    for (v, c) in residuals.row_mut(r).iter_mut().zip(code_row) {
                        *v -= c;
                    }
                }
            }
        }
        self.initialized = true;
        Ok(reports)
    }

    /// Seeds every level with residual rows drawn uniformly from `samples`
    /// (the no-clustering baseline for [`Self::kmeans_init`]).
    pub fn random_init<R: Rng>(&mut self, samples: &Tensor2D, rng: &mut R) -> Result<()> {
        if samples.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        self.check_dim(samples.cols(), "rvq random_init")?;
        let mut residuals = samples.clone();
        for level in 0..self.config.levels {
            let centers = random_sample_init(&residuals, self.config.codes, rng);
            let book = &mut self.books[level];
            for j in 0..self.config.codes {
                book.seed_code(j, centers.row(j));
            }
            if level + 1 < self.config.levels {
                let vectors = &self.books[level].vectors;
                for r in 0..residuals.rows() {
                    let (idx, _) = nearest_code(vectors, residuals.row(r));
                    let code_row: Vec<f64> = vectors.row(idx).to_vec();
                    for (v, c) in residuals.row_mut(r).iter_mut().zip(code_row) {
                        *v -= c;
                    }
                }
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// EMA update of code vectors from one batch of assignments.
    ///
    /// For each level: `usage_ema <- d*usage_ema + (1-d)*n`,
    /// `sum_ema <- d*sum_ema + (1-d)*sum(assigned residuals)`, and for codes
    /// assigned this batch, `vector <- sum_ema / (usage_ema + EPS)`.
    /// Unassigned codes keep their vector and only decay their statistics.
    /// Residuals are taken against the pre-update code vectors, matching the
    /// forward pass that produced `codes`.
    pub fn ema_update(
        &mut self,
        embeddings: &Tensor2D,
        codes: &[RvqCode],
        decay: f64,
    ) -> Result<()> {
        if codes.len() != embeddings.rows() {
            return Err(CoreError::ShapeMismatch {
                context: "rvq ema_update".into(),
                expected: format!("{} codes", embeddings.rows()),
                got: format!("{} codes", codes.len()),
            });
        }
        self.check_dim(embeddings.cols(), "rvq ema_update")?;
        let residuals = self.residuals_per_level(embeddings, codes);
        for (level, level_residuals) in residuals.iter().enumerate() {
            let book = &mut self.books[level];
            let mut counts = vec![0.0f64; self.config.codes];
            let mut sums = Tensor2D::zeros(self.config.codes, self.config.dim);
            for (row, code) in codes.iter().enumerate() {
                let j = code.indices[level];
                counts[j] += 1.0;
                for (s, &v) in sums.row_mut(j).iter_mut().zip(level_residuals.row(row)) {
                    *s += v;
                }
            }
            for j in 0..self.config.codes {
                book.usage_ema[j] = decay * book.usage_ema[j] + (1.0 - decay) * counts[j];
                for (s, &b) in book.sum_ema.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *s = decay * *s + (1.0 - decay) * b;
                }
                if counts[j] > 0.0 {
                    let scale = 1.0 / (book.usage_ema[j] + EMA_EPS);
                    let (vec_row, sum_row) = (j, j);
                    let sum_copy: Vec<f64> = book.sum_ema.row(sum_row).to_vec();
                    for (v, s) in book.vectors.row_mut(vec_row).iter_mut().zip(sum_copy) {
                        *v = s * scale;
                    }
                    book.steps_since_use[j] = 0;
                } else {
                    book.steps_since_use[j] = book.steps_since_use[j].saturating_add(1);
                }
            }
        }
        Ok(())
    }

    /// Replaces every code unused for more than `threshold` batches with a
    /// residual drawn uniformly from the current batch at that level.
    /// Returns `(level, code)` pairs that were replaced.
    pub fn expire_dead_codes<R: Rng>(
        &mut self,
        batch_embeddings: &Tensor2D,
        threshold: u32,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        if batch_embeddings.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        let codes = self.quantize_batch(batch_embeddings)?;
        let residuals = self.residuals_per_level(batch_embeddings, &codes);
        let mut replaced = Vec::new();
        for (level, level_residuals) in residuals.iter().enumerate() {
            let book = &mut self.books[level];
            for j in 0..self.config.codes {
                if book.steps_since_use[j] > threshold {
                    let pick = rng.random_range(0..level_residuals.rows());
                    let row: Vec<f64> = level_residuals.row(pick).to_vec();
                    book.seed_code(j, &row);
                    replaced.push((level, j));
                }
            }
        }
        Ok(replaced)
    }

    /// The residual each level saw as its input, recomputed from current
    /// vectors: level 0 sees the embedding, level l sees the embedding minus
    /// the codes selected at levels `0..l`.
    fn residuals_per_level(&self, embeddings: &Tensor2D, codes: &[RvqCode]) -> Vec<Tensor2D> {
        let mut out = Vec::with_capacity(self.config.levels);
        let mut current = embeddings.clone();
        for level in 0..self.config.levels {
            out.push(current.clone());
            if level + 1 < self.config.levels {
                for (row, code) in codes.iter().enumerate() {
                    let selected = self.books[level].vectors.row(code.indices[level]);
                    let selected: Vec<f64> = selected.to_vec();
                    for (v, c) in current.row_mut(row).iter_mut().zip(selected) {
                        *v -= c;
                    }
                }
            }
        }
        out
    }

    /// Per-level assignment histogram over a batch of codes.
    pub fn histogram(&self, codes: &[RvqCode], level: usize) -> Vec<usize> {
        let mut hist = vec![0usize; self.config.codes];
        for code in codes {
            hist[code.indices[level]] += 1;
        }
        hist
    }
}

/// Fraction of codes with at least one assignment, in `[0, 1]`.
pub fn utilization(histogram: &[usize]) -> f64 {
    if histogram.is_empty() {
        return 0.0;
    }
    let used = histogram.iter().filter(|&&c| c > 0).count();
    used as f64 / histogram.len() as f64
}

/// Codebook perplexity `exp(-sum p log p)` over assignment frequencies.
/// Ranges from 1 (one code takes everything) to the codebook size (uniform).
pub fn perplexity(histogram: &[usize]) -> f64 {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut entropy = 0.0;
    for &c in histogram {
        if c > 0 {
            let p = c as f64 / total as f64;
            entropy -= p * libm::log(p);
        }
    }
    libm::exp(entropy)
}

/// Random-sample initialization: draws `k` rows with replacement when the
/// sample is smaller than the codebook.
fn random_sample_init<R: Rng>(samples: &Tensor2D, k: usize, rng: &mut R) -> Tensor2D {
    Tensor2D::from_rows(
        &(0..k)
            .map(|_| samples.row(rng.random_range(0..samples.rows())).to_vec())
            .collect::<Vec<_>>(),
    )
}

/// Standard k-means with k-means++ seeding. Returns the centers, the number
/// of Lloyd iterations run, and the final inertia (mean squared distance).
/// Stops early when the relative inertia improvement drops below 1e-3.
pub fn kmeans<R: Rng>(
    samples: &Tensor2D,
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> (Tensor2D, usize, f64) {
    let n = samples.rows();
    let dim = samples.cols();
    assert!(n >= k && k > 0, "kmeans needs at least k samples");

    // k-means++ seeding: keep a running nearest-center distance per sample.
    let mut centers = Tensor2D::zeros(k, dim);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(samples.row(first));
    let mut min_d = vec![0.0f64; n];
    for i in 0..n {
        min_d[i] = sq_dist(samples.row(i), centers.row(0));
    }
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let picked: Vec<f64> = samples.row(pick).to_vec();
        centers.row_mut(c).copy_from_slice(&picked);
        for i in 0..n {
            let d = sq_dist(samples.row(i), &picked);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }

    // Lloyd iterations.
    let mut assignment = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0;
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iters {
        iterations += 1;
        let mut total = 0.0;
        for i in 0..n {
            let (idx, d) = nearest_code(&centers, samples.row(i));
            assignment[i] = idx;
            total += d;
        }
        inertia = total / n as f64;

        let mut counts = vec![0usize; k];
        let mut sums = Tensor2D::zeros(k, dim);
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, &v) in sums.row_mut(assignment[i]).iter_mut().zip(samples.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                let sum_row: Vec<f64> = sums.row(j).to_vec();
                for (cv, s) in centers.row_mut(j).iter_mut().zip(sum_row) {
                    *cv = s * inv;
                }
            } else {
                // Empty cluster: reseed from a random sample.
                let pick = rng.random_range(0..n);
                let row: Vec<f64> = samples.row(pick).to_vec();
                centers.row_mut(j).copy_from_slice(&row);
            }
        }

        if prev_inertia.is_finite() {
            let improvement = (prev_inertia - inertia) / prev_inertia.max(1e-12);
            if improvement < 1e-3 {
                break;
            }
        }
        prev_inertia = inertia;
    }
    (centers, iterations, inertia)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}
