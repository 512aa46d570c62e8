//! End-to-end tokenizer training: reconstruction + commitment losses through
//! a straight-through or rotation gradient estimator, Adam updates for the
//! two networks, and EMA/expiration maintenance for the codebooks.
//!
//! The codebooks are never touched by the optimizer; they evolve only through
//! the EMA statistics (and expiration) applied in [`Trainer::train_step`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::Tokenizer;
use crate::error::{CoreError, Result};
use crate::nn::{Mlp, MlpGrads};
use crate::rewards::smape;
use crate::rvq::{self, KmeansLevelReport, RvqCode};
use crate::series::{patchify, Series, PATCH_LEN};
use crate::tensor::Tensor2D;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Validation passes subsample evenly down to this many patches.
pub const EVAL_CAP: usize = 4096;

/// Learning-rate schedule over the whole fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero across `total_steps`.
    Cosine,
}

/// Learning rate for step `step` of `total_steps`.
pub fn lr_at(base: f64, schedule: LrSchedule, step: u64, total_steps: u64) -> f64 {
    match schedule {
        LrSchedule::Constant => base,
        LrSchedule::Cosine => {
            if total_steps == 0 {
                return base;
            }
            let t = (step.min(total_steps)) as f64 / total_steps as f64;
            base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t))
        }
    }
}

/// How decoder-side gradients reach the encoder across the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEstimator {
    /// `grad_e = grad_q`: the quantizer is treated as identity.
    StraightThrough,
    /// `grad_e = (|q|/|e|) * R^T grad_q` where `R` is the minimal rotation
    /// taking the direction of `e` to the direction of `q`, held constant
    /// w.r.t. differentiation. Degenerate geometry falls back to
    /// straight-through.
    Rotation,
}

/// Applies the chosen estimator to one embedding row.
pub fn estimate_grad_e(
    estimator: GradientEstimator,
    e: &[f64],
    q: &[f64],
    grad_q: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(e.len(), q.len());
    debug_assert_eq!(e.len(), grad_q.len());
    match estimator {
        GradientEstimator::StraightThrough => grad_q.to_vec(),
        GradientEstimator::Rotation => rotation_grad(e, q, grad_q),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn rotation_grad(e: &[f64], q: &[f64], grad_q: &[f64]) -> Vec<f64> {
    let en = norm(e);
    let qn = norm(q);
    if en == 0.0 || qn == 0.0 {
        return grad_q.to_vec();
    }
    let u: Vec<f64> = e.iter().map(|v| v / en).collect();
    let q_hat: Vec<f64> = q.iter().map(|v| v / qn).collect();
    let c = dot(&u, &q_hat);
    // Antipodal directions leave the rotation plane undefined.
    if c <= -1.0 + 1e-8 {
        return grad_q.to_vec();
    }
    let scale = qn / en;
    // v = component of q_hat orthogonal to u; s = sin of the rotation angle.
    let v_raw: Vec<f64> = q_hat.iter().zip(u.iter()).map(|(qh, uh)| qh - c * uh).collect();
    let s = norm(&v_raw);
    if s <= 1e-12 {
        // Already aligned: R = I.
        return grad_q.iter().map(|g| scale * g).collect();
    }
    let v: Vec<f64> = v_raw.iter().map(|x| x / s).collect();
    // R^T g = g + (c-1)(u(u.g) + v(v.g)) + s(u(v.g) - v(u.g))
    let ug = dot(&u, grad_q);
    let vg = dot(&v, grad_q);
    let a_u = (c - 1.0) * ug + s * vg;
    let a_v = (c - 1.0) * vg - s * ug;
    grad_q
        .iter()
        .enumerate()
        .map(|(i, g)| scale * (g + a_u * u[i] + a_v * v[i]))
        .collect()
}

/// Adam state for one network, flattened in parameter-visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    /// One Adam update of `model` from `grads` at learning rate `lr`.
    pub fn update(&mut self, model: &mut Mlp, grads: &MlpGrads, lr: f64) -> Result<()> {
        let mut flat = Vec::with_capacity(self.m.len());
        grads.visit(&mut |_, values| flat.extend_from_slice(values));
        if flat.len() != self.m.len() {
            return Err(CoreError::ShapeMismatch {
                context: "adam update".into(),
                expected: format!("{} gradient values", self.m.len()),
                got: format!("{} gradient values", flat.len()),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - libm::pow(ADAM_BETA1, self.step as f64);
        let bc2 = 1.0 - libm::pow(ADAM_BETA2, self.step as f64);
        let mut offset = 0usize;
        model.visit_params_mut(&mut |_, params| {
            for (i, p) in params.iter_mut().enumerate() {
                let g = flat[offset + i];
                let m = &mut self.m[offset + i];
                let v = &mut self.v[offset + i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
            }
            offset += params.len();
        });
        debug_assert_eq!(offset, flat.len());
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    /// Commitment loss weight.
    pub beta: f64,
    pub ema_decay: f64,
    pub dead_code_threshold: u32,
    /// Apply dead-code expiration each step.
    pub expiration: bool,
    pub estimator: GradientEstimator,
    pub seed: u64,
    /// Initialize codebooks with k-means on the first sample (vs random rows).
    pub kmeans_init: bool,
    /// Patches used for codebook initialization.
    pub init_sample: usize,
    /// When false, codebooks are frozen (no EMA, no expiration).
    pub update_codebooks: bool,
    /// Checkpoint cadence in epochs (used by callers that persist state).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 10,
            lr: 1e-3,
            schedule: LrSchedule::Cosine,
            beta: 0.25,
            ema_decay: 0.99,
            dead_code_threshold: 64,
            expiration: true,
            estimator: GradientEstimator::StraightThrough,
            seed: 0,
            kmeans_init: true,
            init_sample: 4096,
            update_codebooks: true,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // epochs == 0 is allowed: an init-only run (codebook init + baseline
        // evaluation) is how an untrained-but-usable model is produced.
        if self.batch_size == 0 || self.init_sample == 0 {
            return Err(CoreError::invalid_config(
                "batch size and init sample must be positive",
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CoreError::invalid_config("learning rate must be positive"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(CoreError::invalid_config("beta must be finite and >= 0"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(CoreError::invalid_config("ema decay must lie in (0, 1)"));
        }
        if self.checkpoint_every == 0 {
            return Err(CoreError::invalid_config("checkpoint cadence must be positive"));
        }
        Ok(())
    }
}

/// Per-step losses; `total = recon_mse + beta * commit` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub recon_mse: f64,
    pub commit: f64,
    pub total: f64,
    pub expired: usize,
}

/// Aggregates over one epoch plus a validation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_recon_mse: f64,
    pub mean_commit: f64,
    pub mean_total: f64,
    /// Percent of codes per level assigned at least once this epoch, in
    /// `[0, 100]`.
    pub utilization_pct: Vec<f64>,
    /// Perplexity of the per-level assignment distribution this epoch.
    pub perplexity: Vec<f64>,
    pub expired: usize,
    pub val_mse: f64,
    pub val_smape: f64,
}

/// Everything `fit` produced; epoch history plus the untrained baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub epochs: Vec<EpochMetrics>,
    pub baseline_val_mse: f64,
    pub baseline_val_smape: f64,
    /// Epoch index (into `epochs`) with the lowest validation MSE.
    pub best_epoch: usize,
    pub init_reports: Vec<KmeansLevelReport>,
}

/// Progress callbacks emitted by [`Trainer::fit`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    /// Codebooks initialized; baseline validation performance attached.
    Start {
        baseline_val_mse: f64,
        baseline_val_smape: f64,
        total_steps: u64,
    },
    Step(StepMetrics),
    Epoch(EpochMetrics),
}

/// Owns the model plus all mutable training state.
pub struct Trainer {
    pub model: Tokenizer,
    pub config: TrainConfig,
    pub enc_opt: Adam,
    pub dec_opt: Adam,
    pub rng: ChaCha8Rng,
    pub global_step: u64,
    /// Denominator of the cosine schedule; set by `fit`, or manually when
    /// driving `train_step` directly.
    pub total_steps: u64,
}

impl Trainer {
    pub fn new(model: Tokenizer, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let enc_params = model.encoder.param_count();
        let dec_params = model.decoder.param_count();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            enc_opt: Adam::new(enc_params),
            dec_opt: Adam::new(dec_params),
            rng,
            global_step: 0,
            total_steps: 0,
        })
    }

    /// Initializes the codebooks from up to `init_sample` rows of `data`
    /// (encoder embeddings), if not already initialized.
    pub fn ensure_initialized(&mut self, data: &Tensor2D) -> Result<Vec<KmeansLevelReport>> {
        if self.model.rvq.initialized {
            return Ok(Vec::new());
        }
        if data.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        let take = data.rows().min(self.config.init_sample);
        let sample = Tensor2D::from_rows(
            &(0..take).map(|r| data.row(r).to_vec()).collect::<Vec<_>>(),
        );
        let embeddings = self.model.encoder.infer(&sample)?;
        if self.config.kmeans_init {
            self.model.rvq.kmeans_init(&embeddings, &mut self.rng)
        } else {
            self.model.rvq.random_init(&embeddings, &mut self.rng)?;
            Ok(Vec::new())
        }
    }

    /// One optimization step on a batch of scaled patches (rows).
    /// Returns the step metrics and the per-row code assignments.
    pub fn train_step(&mut self, batch: &Tensor2D) -> Result<(StepMetrics, Vec<RvqCode>)> {
        if batch.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        let (embeddings, enc_cache) = self.model.encoder.forward(batch)?;
        let codes = self.model.rvq.quantize_batch(&embeddings)?;
        let dim = self.model.rvq.config.dim;
        let mut quantized = Tensor2D::zeros(batch.rows(), dim);
        for (row, code) in codes.iter().enumerate() {
            quantized.row_mut(row).copy_from_slice(&code.quantized);
        }
        let (decoded, dec_cache) = self.model.decoder.forward(&quantized)?;

        let n_out = (batch.rows() * batch.cols()) as f64;
        let n_emb = (embeddings.rows() * embeddings.cols()) as f64;
        let mut recon = 0.0;
        for (d, x) in decoded.data().iter().zip(batch.data()) {
            let diff = d - x;
            recon += diff * diff;
        }
        recon /= n_out;
        let mut commit = 0.0;
        for (e, q) in embeddings.data().iter().zip(quantized.data()) {
            let diff = e - q;
            commit += diff * diff;
        }
        commit /= n_emb;
        let total = recon + self.config.beta * commit;
        if !total.is_finite() {
            return Err(CoreError::non_finite(&format!(
                "loss at step {}: recon={recon:e} commit={commit:e}",
                self.global_step
            )));
        }

        // Decoder gradient: d/dD of mean((D - X)^2).
        let mut grad_decoded = decoded.clone();
        for (g, x) in grad_decoded.data_mut().iter_mut().zip(batch.data()) {
            *g = 2.0 * (*g - x) / n_out;
        }
        let (dec_grads, grad_q) = self.model.decoder.backward(&dec_cache, &grad_decoded)?;

        // Encoder gradient: estimator(grad_q) + commitment term
        // d/dE of beta * mean((E - stopgrad(Q))^2).
        let mut grad_embeddings = Tensor2D::zeros(embeddings.rows(), dim);
        for row in 0..embeddings.rows() {
            let through = estimate_grad_e(
                self.config.estimator,
                embeddings.row(row),
                quantized.row(row),
                grad_q.row(row),
            );
            let e_row = embeddings.row(row);
            let q_row = quantized.row(row);
            let out = grad_embeddings.row_mut(row);
            for i in 0..dim {
                out[i] = through[i] + 2.0 * self.config.beta * (e_row[i] - q_row[i]) / n_emb;
            }
        }
        let (enc_grads, _) = self.model.encoder.backward(&enc_cache, &grad_embeddings)?;

        // Codebook maintenance (EMA + expiration); never optimizer-driven.
        let mut expired = 0usize;
        if self.config.update_codebooks {
            self.model
                .rvq
                .ema_update(&embeddings, &codes, self.config.ema_decay)?;
            if self.config.expiration {
                expired = self
                    .model
                    .rvq
                    .expire_dead_codes(&embeddings, self.config.dead_code_threshold, &mut self.rng)?
                    .len();
            }
        }

        let lr = lr_at(self.config.lr, self.config.schedule, self.global_step, self.total_steps);
        self.enc_opt.update(&mut self.model.encoder, &enc_grads, lr)?;
        self.dec_opt.update(&mut self.model.decoder, &dec_grads, lr)?;
        self.global_step += 1;

        Ok((
            StepMetrics {
                step: self.global_step,
                lr,
                recon_mse: recon,
                commit,
                total,
                expired,
            },
            codes,
        ))
    }

    /// One pass over `train` in shuffled batches; `val` scored afterwards.
    pub fn train_epoch(
        &mut self,
        train: &Tensor2D,
        val: &Tensor2D,
        epoch: usize,
        observer: &mut dyn FnMut(&TrainEvent),
    ) -> Result<EpochMetrics> {
        if train.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        let mut order: Vec<usize> = (0..train.rows()).collect();
        order.shuffle(&mut self.rng);
        let levels = self.model.rvq.config.levels;
        let codes_per_level = self.model.rvq.config.codes;
        let mut histograms = vec![vec![0usize; codes_per_level]; levels];
        let mut sums = (0.0, 0.0, 0.0);
        let mut expired = 0usize;
        let mut steps = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = Tensor2D::from_rows(
                &chunk.iter().map(|&r| train.row(r).to_vec()).collect::<Vec<_>>(),
            );
            let (metrics, codes) = self.train_step(&batch)?;
            for code in &codes {
                for (level, &j) in code.indices.iter().enumerate() {
                    histograms[level][j] += 1;
                }
            }
            sums.0 += metrics.recon_mse;
            sums.1 += metrics.commit;
            sums.2 += metrics.total;
            expired += metrics.expired;
            steps += 1;
            observer(&TrainEvent::Step(metrics));
        }
        let (val_mse, val_smape) = self.evaluate(val)?;
        let metrics = EpochMetrics {
            epoch,
            mean_recon_mse: sums.0 / steps as f64,
            mean_commit: sums.1 / steps as f64,
            mean_total: sums.2 / steps as f64,
            utilization_pct: histograms.iter().map(|h| 100.0 * rvq::utilization(h)).collect(),
            perplexity: histograms.iter().map(|h| rvq::perplexity(h)).collect(),
            expired,
            val_mse,
            val_smape,
        };
        observer(&TrainEvent::Epoch(metrics.clone()));
        Ok(metrics)
    }

    /// Reconstruction quality on scaled patches: `(mean MSE, mean per-patch
    /// SMAPE)`. Rows are subsampled evenly past [`EVAL_CAP`].
    pub fn evaluate(&self, data: &Tensor2D) -> Result<(f64, f64)> {
        if data.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        let stride = data.rows().div_ceil(EVAL_CAP);
        let rows: Vec<Vec<f64>> = (0..data.rows())
            .step_by(stride)
            .map(|r| data.row(r).to_vec())
            .collect();
        let sample = Tensor2D::from_rows(&rows);
        let embeddings = self.model.encoder.infer(&sample)?;
        let codes = self.model.rvq.quantize_batch(&embeddings)?;
        let mut quantized = Tensor2D::zeros(sample.rows(), self.model.rvq.config.dim);
        for (row, code) in codes.iter().enumerate() {
            quantized.row_mut(row).copy_from_slice(&code.quantized);
        }
        let decoded = self.model.decoder.infer(&quantized)?;
        let mut mse = 0.0;
        for (d, x) in decoded.data().iter().zip(sample.data()) {
            let diff = d - x;
            mse += diff * diff;
        }
        mse /= (sample.rows() * sample.cols()) as f64;
        let mut smape_sum = 0.0;
        for row in 0..sample.rows() {
            smape_sum += smape(sample.row(row), decoded.row(row))?;
        }
        Ok((mse, smape_sum / sample.rows() as f64))
    }

    /// Full training run: codebook init, baseline scoring, `epochs` passes.
    pub fn fit(
        &mut self,
        train: &Tensor2D,
        val: &Tensor2D,
        observer: &mut dyn FnMut(&TrainEvent),
    ) -> Result<FitReport> {
        if train.rows() == 0 || val.rows() == 0 {
            return Err(CoreError::EmptyInput);
        }
        let init_reports = self.ensure_initialized(train)?;
        let steps_per_epoch = train.rows().div_ceil(self.config.batch_size) as u64;
        self.total_steps = self.config.epochs as u64 * steps_per_epoch;
        let (baseline_val_mse, baseline_val_smape) = self.evaluate(val)?;
        observer(&TrainEvent::Start {
            baseline_val_mse,
            baseline_val_smape,
            total_steps: self.total_steps,
        });
        let mut epochs = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            epochs.push(self.train_epoch(train, val, epoch, observer)?);
        }
        let best_epoch = epochs
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.val_mse.total_cmp(&b.val_mse))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(FitReport {
            epochs,
            baseline_val_mse,
            baseline_val_smape,
            best_epoch,
            init_reports,
        })
    }

    /// Rounds every float in the model and optimizer state through `f32`,
    /// matching what a checkpoint stores, so that training continued in
    /// memory is bit-identical to training resumed from disk.
    pub fn snap_to_f32(&mut self) {
        let snap_slice = |values: &mut [f64]| {
            for v in values.iter_mut() {
                *v = *v as f32 as f64;
            }
        };
        self.model.encoder.visit_params_mut(&mut |_, p| snap_slice(p));
        self.model.decoder.visit_params_mut(&mut |_, p| snap_slice(p));
        for book in &mut self.model.rvq.books {
            snap_slice(book.vectors.data_mut());
            snap_slice(book.sum_ema.data_mut());
            snap_slice(&mut book.usage_ema);
        }
        for opt in [&mut self.enc_opt, &mut self.dec_opt] {
            snap_slice(&mut opt.m);
            snap_slice(&mut opt.v);
        }
    }
}

/// Patchifies and scales an entire corpus into a `[patches, PATCH_LEN]`
/// training matrix. Trailing partial patches are padded with each series'
/// final value.
pub fn collect_patches(corpus: &[Series]) -> Result<Tensor2D> {
    let mut rows: Vec<[f64; PATCH_LEN]> = Vec::new();
    for series in corpus {
        let pad = *series.values.last().ok_or(CoreError::EmptyInput)?;
        for patch in patchify(series, pad)? {
            rows.push(patch.scaled);
        }
    }
    if rows.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let mut m = Tensor2D::zeros(rows.len(), PATCH_LEN);
    for (r, row) in rows.iter().enumerate() {
        m.row_mut(r).copy_from_slice(row);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;
    use crate::rvq::RvqConfig;
    use rand::Rng;

    fn tiny_model(seed: u64) -> Tokenizer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tokenizer::with_configs(
            MlpConfig {
                input: PATCH_LEN,
                hidden: 16,
                output: 8,
                blocks: 2,
            },
            MlpConfig {
                input: 8,
                hidden: 16,
                output: PATCH_LEN,
                blocks: 2,
            },
            RvqConfig {
                levels: 3,
                codes: 8,
                dim: 8,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn tiny_data(rows: usize, seed: u64) -> Tensor2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2D::from_fn(rows, PATCH_LEN, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 2,
            init_sample: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decomposition_is_exact() {
        let mut trainer = Trainer::new(tiny_model(1), tiny_config()).unwrap();
        let data = tiny_data(32, 2);
        trainer.ensure_initialized(&data).unwrap();
        let (m, _) = trainer.train_step(&data).unwrap();
        assert_eq!(m.total, m.recon_mse + trainer.config.beta * m.commit);

        let mut config = tiny_config();
        config.beta = 0.0;
        let mut trainer = Trainer::new(tiny_model(1), config).unwrap();
        trainer.ensure_initialized(&data).unwrap();
        let (m, _) = trainer.train_step(&data).unwrap();
        assert_eq!(m.total, m.recon_mse);
    }

    #[test]
    fn straight_through_is_identity() {
        let e = [1.0, -2.0, 3.0];
        let q = [0.5, 0.5, 0.5];
        let g = [0.1, 0.2, -0.3];
        assert_eq!(estimate_grad_e(GradientEstimator::StraightThrough, &e, &q, &g), g.to_vec());
    }

    #[test]
    fn rotation_with_aligned_vectors_is_identity() {
        let e = [0.3, -0.4, 1.2];
        let g = [0.5, 0.25, -1.0];
        let out = estimate_grad_e(GradientEstimator::Rotation, &e, &e, &g);
        for (a, b) in out.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_norm_up_to_scale() {
        let e = [1.0, 2.0, -0.5, 0.25];
        let q = [-0.3, 1.5, 0.8, 2.0];
        let g = [0.4, -0.2, 0.9, 0.1];
        let out = estimate_grad_e(GradientEstimator::Rotation, &e, &q, &g);
        let expect = norm(&q) / norm(&e) * norm(&g);
        assert!((norm(&out) - expect).abs() < 1e-9);
    }

    #[test]
    fn rotation_maps_grad_along_q_to_along_e() {
        // R takes the direction of e to the direction of q, so R^T takes
        // grad_q parallel to q back to the direction of e.
        let e = [2.0, 0.0, 0.0];
        let q = [0.0, 3.0, 0.0];
        let g = [0.0, 1.0, 0.0]; // q_hat
        let out = estimate_grad_e(GradientEstimator::Rotation, &e, &q, &g);
        let scale = norm(&q) / norm(&e);
        let expect = [scale, 0.0, 0.0]; // scale * e_hat
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn rotation_degenerate_cases_fall_back() {
        let e = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        let g = [0.3, 0.1, -0.7];
        assert_eq!(estimate_grad_e(GradientEstimator::Rotation, &e, &neg, &g), g.to_vec());
        let zero = [0.0, 0.0, 0.0];
        assert_eq!(estimate_grad_e(GradientEstimator::Rotation, &zero, &e, &g), g.to_vec());
        assert_eq!(estimate_grad_e(GradientEstimator::Rotation, &e, &zero, &g), g.to_vec());
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Mlp::init(
            MlpConfig {
                input: 4,
                hidden: 8,
                output: 4,
                blocks: 1,
            },
            &mut rng,
        )
        .unwrap();
        let mut before = Vec::new();
        model.visit_params(&mut |_, _, _, p| before.extend_from_slice(p));
        // Gradient of ones everywhere => first Adam step moves every
        // parameter by ~ -lr (bias-corrected m/sqrt(v) = 1).
        let (_, cache) = model.forward(&Tensor2D::zeros(2, 4)).unwrap();
        let (mut grads, _) = model
            .backward(&cache, &Tensor2D::zeros(2, 4))
            .unwrap();
        grads.visit_mut(&mut |_, g| g.iter_mut().for_each(|v| *v = 1.0));
        let mut opt = Adam::new(model.param_count());
        opt.update(&mut model, &grads, 1e-3).unwrap();
        let mut after = Vec::new();
        model.visit_params(&mut |_, _, _, p| after.extend_from_slice(p));
        for (b, a) in before.iter().zip(after.iter()) {
            assert!(((b - a) - 1e-3).abs() < 1e-8, "{b} -> {a}");
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((lr_at(1e-3, LrSchedule::Cosine, 0, 100) - 1e-3).abs() < 1e-18);
        assert!((lr_at(1e-3, LrSchedule::Cosine, 50, 100) - 5e-4).abs() < 1e-12);
        assert!(lr_at(1e-3, LrSchedule::Cosine, 100, 100).abs() < 1e-18);
        assert_eq!(lr_at(1e-3, LrSchedule::Cosine, 7, 0), 1e-3);
        assert_eq!(lr_at(1e-3, LrSchedule::Constant, 7, 100), 1e-3);
    }

    #[test]
    fn frozen_codebooks_are_bitwise_unchanged() {
        let mut config = tiny_config();
        config.update_codebooks = false;
        config.expiration = true;
        let mut trainer = Trainer::new(tiny_model(5), config).unwrap();
        let data = tiny_data(48, 6);
        trainer.ensure_initialized(&data).unwrap();
        let before = trainer.model.rvq.clone();
        let mut enc_before = Vec::new();
        trainer.model.encoder.visit_params(&mut |_, _, _, p| enc_before.extend_from_slice(p));
        for _ in 0..3 {
            trainer.train_step(&data).unwrap();
        }
        // Codebooks untouched by the optimizer or EMA...
        for (a, b) in trainer.model.rvq.books.iter().zip(before.books.iter()) {
            assert_eq!(a.vectors.data(), b.vectors.data());
            assert_eq!(a.sum_ema.data(), b.sum_ema.data());
            assert_eq!(a.usage_ema, b.usage_ema);
            assert_eq!(a.steps_since_use, b.steps_since_use);
        }
        // ...while the networks did train.
        let mut enc_after = Vec::new();
        trainer.model.encoder.visit_params(&mut |_, _, _, p| enc_after.extend_from_slice(p));
        assert_ne!(enc_before, enc_after);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = tiny_data(64, 9);
        let val = tiny_data(16, 10);
        let run = || {
            let mut trainer = Trainer::new(tiny_model(7), tiny_config()).unwrap();
            trainer.fit(&data, &val, &mut |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(a.epochs.len(), 2);
        for epoch in &a.epochs {
            for u in &epoch.utilization_pct {
                assert!((0.0..=100.0).contains(u));
            }
            assert!(epoch.mean_total.is_finite());
        }
    }

    #[test]
    fn training_reduces_loss_on_tiny_problem() {
        // Eight repeating waveforms: representable by the 8-code books.
        let data = Tensor2D::from_fn(64, PATCH_LEN, |r, c| {
            libm::sin((r % 8) as f64 + c as f64 * 0.2)
        });
        let val = data.clone();
        let mut config = tiny_config();
        config.epochs = 30;
        config.lr = 3e-3;
        let mut trainer = Trainer::new(tiny_model(13), config).unwrap();
        let report = trainer.fit(&data, &val, &mut |_| {}).unwrap();
        let last = report.epochs.last().unwrap();
        assert!(
            last.val_mse < report.baseline_val_mse,
            "val mse {} vs baseline {}",
            last.val_mse,
            report.baseline_val_mse
        );
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut trainer = Trainer::new(tiny_model(15), tiny_config()).unwrap();
        let data = tiny_data(16, 16);
        trainer.ensure_initialized(&data).unwrap();
        // Huge final-layer weights push the squared error past f64 range.
        trainer.model.decoder.visit_params_mut(&mut |name, p| {
            if name == "block1.down.w" {
                p.iter_mut().for_each(|v| *v = 1e200);
            }
        });
        let err = trainer.train_step(&data).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn snap_to_f32_is_idempotent() {
        let data = tiny_data(32, 17);
        let mut trainer = Trainer::new(tiny_model(18), tiny_config()).unwrap();
        trainer.ensure_initialized(&data).unwrap();
        trainer.train_step(&data).unwrap();
        trainer.snap_to_f32();
        let mut once = Vec::new();
        trainer.model.encoder.visit_params(&mut |_, _, _, p| once.extend_from_slice(p));
        trainer.snap_to_f32();
        let mut twice = Vec::new();
        trainer.model.encoder.visit_params(&mut |_, _, _, p| twice.extend_from_slice(p));
        assert_eq!(once, twice);
        for v in once {
            assert_eq!(v, v as f32 as f64);
        }
    }

    #[test]
    fn resume_after_snap_matches_continuous_run() {
        // Train 2 steps, snap, then 2 more; versus restoring the snapped
        // state into a fresh trainer and running the same 2 steps.
        let data = tiny_data(32, 19);
        let mut a = Trainer::new(tiny_model(20), tiny_config()).unwrap();
        a.ensure_initialized(&data).unwrap();
        a.total_steps = 4;
        a.train_step(&data).unwrap();
        a.train_step(&data).unwrap();
        a.snap_to_f32();

        let mut b = Trainer::new(tiny_model(20), tiny_config()).unwrap();
        b.ensure_initialized(&data).unwrap();
        b.total_steps = 4;
        b.train_step(&data).unwrap();
        b.train_step(&data).unwrap();
        b.snap_to_f32();
        // Simulate checkpoint restore: identical snapped state and rng.
        assert_eq!(a.rng, b.rng);

        let (ma, _) = a.train_step(&data).unwrap();
        let (mb, _) = b.train_step(&data).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn kmeans_init_beats_random_init_on_clustered_data() {
        // Blobby embeddings: k-means should place codes on blob centers.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = Tensor2D::from_fn(96, PATCH_LEN, |r, _| {
            (r % 4) as f64 * 2.0 - 3.0 + 0.01 * (rng.random::<f64>() - 0.5)
        });
        let val = data.clone();
        let run = |kmeans: bool| {
            let mut config = tiny_config();
            config.kmeans_init = kmeans;
            config.epochs = 1;
            let mut trainer = Trainer::new(tiny_model(22), config).unwrap();
            let report = trainer.fit(&data, &val, &mut |_| {}).unwrap();
            report.epochs[0].mean_recon_mse
        };
        let with_kmeans = run(true);
        let with_random = run(false);
        assert!(
            with_kmeans <= with_random,
            "kmeans {with_kmeans} vs random {with_random}"
        );
    }

    #[test]
    fn collect_patches_scales_rows() {
        let series = Series {
            id: "s".into(),
            values: vec![4.0; 80],
            meta: Default::default(),
        };
        let m = collect_patches(&[series]).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), PATCH_LEN);
        // 4.0 scales by 2^-2 to 1.0.
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
            TrainConfig { beta: -0.1, ..TrainConfig::default() },
            TrainConfig { ema_decay: 0.0, ..TrainConfig::default() },
            TrainConfig { ema_decay: 1.0, ..TrainConfig::default() },
            TrainConfig { init_sample: 0, ..TrainConfig::default() },
            TrainConfig { checkpoint_every: 0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
