//! Versioned binary checkpoints for the tokenizer and its training state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "TSTOKCP1"
//! bytes 8..16   u64 header length H
//! bytes 16..16+H  JSON header (architecture, flags, train state, entry table)
//! remainder     payload arrays, concatenated in entry-table order
//! ```
//!
//! Parameters and codebook statistics are stored as `f32`; assignment-age
//! counters as `u32`. Training state (optimizer moments, RNG position, step
//! counters) rides along so a run can resume exactly. The save path expects
//! the caller to snap the in-memory state to `f32` first (`Trainer::
//! snap_to_f32`), which makes save→load lossless and resumed runs
//! bit-identical to uninterrupted ones.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tstok_core::nn::{Mlp, MlpConfig};
use tstok_core::rvq::RvqConfig;
use tstok_core::train::{Adam, GradientEstimator, LrSchedule, TrainConfig, Trainer};
use tstok_core::Tokenizer;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TSTOKCP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Gradient estimator choice as it appears in flags and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorOpt {
    StraightThrough,
    Rotation,
}

impl From<EstimatorOpt> for GradientEstimator {
    fn from(value: EstimatorOpt) -> Self {
        match value {
            EstimatorOpt::StraightThrough => GradientEstimator::StraightThrough,
            EstimatorOpt::Rotation => GradientEstimator::Rotation,
        }
    }
}

impl From<GradientEstimator> for EstimatorOpt {
    fn from(value: GradientEstimator) -> Self {
        match value {
            GradientEstimator::StraightThrough => EstimatorOpt::StraightThrough,
            GradientEstimator::Rotation => EstimatorOpt::Rotation,
        }
    }
}

/// Learning-rate schedule choice for flags and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleOpt {
    Constant,
    Cosine,
}

impl From<ScheduleOpt> for LrSchedule {
    fn from(value: ScheduleOpt) -> Self {
        match value {
            ScheduleOpt::Constant => LrSchedule::Constant,
            ScheduleOpt::Cosine => LrSchedule::Cosine,
        }
    }
}

impl From<LrSchedule> for ScheduleOpt {
    fn from(value: LrSchedule) -> Self {
        match value {
            LrSchedule::Constant => ScheduleOpt::Constant,
            LrSchedule::Cosine => ScheduleOpt::Cosine,
        }
    }
}

/// Serializable mirror of the core training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigSer {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub schedule: ScheduleOpt,
    pub beta: f64,
    pub ema_decay: f64,
    pub dead_code_threshold: u32,
    pub expiration: bool,
    pub estimator: EstimatorOpt,
    pub seed: u64,
    pub kmeans_init: bool,
    pub init_sample: usize,
    pub update_codebooks: bool,
    pub checkpoint_every: usize,
}

impl From<&TrainConfig> for TrainConfigSer {
    fn from(c: &TrainConfig) -> Self {
        Self {
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            schedule: c.schedule.into(),
            beta: c.beta,
            ema_decay: c.ema_decay,
            dead_code_threshold: c.dead_code_threshold,
            expiration: c.expiration,
            estimator: c.estimator.into(),
            seed: c.seed,
            kmeans_init: c.kmeans_init,
            init_sample: c.init_sample,
            update_codebooks: c.update_codebooks,
            checkpoint_every: c.checkpoint_every,
        }
    }
}

impl From<&TrainConfigSer> for TrainConfig {
    fn from(c: &TrainConfigSer) -> Self {
        Self {
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            schedule: c.schedule.into(),
            beta: c.beta,
            ema_decay: c.ema_decay,
            dead_code_threshold: c.dead_code_threshold,
            expiration: c.expiration,
            estimator: c.estimator.into(),
            seed: c.seed,
            kmeans_init: c.kmeans_init,
            init_sample: c.init_sample,
            update_codebooks: c.update_codebooks,
            checkpoint_every: c.checkpoint_every,
        }
    }
}

impl Default for TrainConfigSer {
    fn default() -> Self {
        (&TrainConfig::default()).into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpArch {
    input: usize,
    hidden: usize,
    output: usize,
    blocks: usize,
}

impl From<&MlpConfig> for MlpArch {
    fn from(c: &MlpConfig) -> Self {
        Self {
            input: c.input,
            hidden: c.hidden,
            output: c.output,
            blocks: c.blocks,
        }
    }
}

impl From<&MlpArch> for MlpConfig {
    fn from(a: &MlpArch) -> Self {
        Self {
            input: a.input,
            hidden: a.hidden,
            output: a.output,
            blocks: a.blocks,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RvqArch {
    levels: usize,
    codes: usize,
    dim: usize,
}

/// Saved RNG position: ChaCha seed, stream id, and 128-bit word offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngStateSer {
    pub seed: Vec<u8>,
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngStateSer {
    fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| anyhow::anyhow!("RNG seed must be 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        Ok(rng)
    }
}

/// Training-state portion of the header; absent in model-only checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStateHeader {
    pub config: TrainConfigSer,
    pub global_step: u64,
    pub total_steps: u64,
    pub epochs_done: usize,
    pub best_val_mse: Option<f64>,
    pub enc_opt_step: u64,
    pub dec_opt_step: u64,
    pub rng: RngStateSer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    U32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    encoder: MlpArch,
    decoder: MlpArch,
    rvq: RvqArch,
    /// Whether the codebooks have been initialized (k-means or random).
    initialized: bool,
    train: Option<TrainStateHeader>,
    entries: Vec<Entry>,
}

enum Payload<'a> {
    F64(&'a [f64]),
    /// Network parameters are copied out because the visitor only lends them
    /// for the duration of each callback.
    F64Owned(Vec<f64>),
    U32(&'a [u32]),
}

struct PendingEntry<'a> {
    entry: Entry,
    payload: Payload<'a>,
}

fn push_f64<'a>(out: &mut Vec<PendingEntry<'a>>, name: String, rows: usize, cols: usize, data: &'a [f64]) {
    debug_assert_eq!(rows * cols, data.len());
    out.push(PendingEntry {
        entry: Entry {
            name,
            rows,
            cols,
            dtype: Dtype::F32,
        },
        payload: Payload::F64(data),
    });
}

fn collect_entries<'a>(model: &'a Tokenizer, opt: Option<(&'a Adam, &'a Adam)>) -> Vec<PendingEntry<'a>> {
    let mut out = Vec::new();
    for (prefix, mlp) in [("encoder", &model.encoder), ("decoder", &model.decoder)] {
        mlp.visit_params(&mut |name, rows, cols, data| {
            debug_assert_eq!(rows * cols, data.len());
            out.push(PendingEntry {
                entry: Entry {
                    name: format!("{prefix}/{name}"),
                    rows,
                    cols,
                    dtype: Dtype::F32,
                },
                payload: Payload::F64Owned(data.to_vec()),
            });
        });
    }
    for (l, book) in model.rvq.books.iter().enumerate() {
        let codes = book.vectors.rows();
        let dim = book.vectors.cols();
        push_f64(&mut out, format!("rvq/level{l}/vectors"), codes, dim, book.vectors.data());
        push_f64(&mut out, format!("rvq/level{l}/sum_ema"), codes, dim, book.sum_ema.data());
        push_f64(&mut out, format!("rvq/level{l}/usage_ema"), 1, codes, &book.usage_ema);
        out.push(PendingEntry {
            entry: Entry {
                name: format!("rvq/level{l}/steps_since_use"),
                rows: 1,
                cols: codes,
                dtype: Dtype::U32,
            },
            payload: Payload::U32(&book.steps_since_use),
        });
    }
    if let Some((enc, dec)) = opt {
        for (name, adam) in [("opt/encoder", enc), ("opt/decoder", dec)] {
            push_f64(&mut out, format!("{name}/m"), 1, adam.m.len(), &adam.m);
            push_f64(&mut out, format!("{name}/v"), 1, adam.v.len(), &adam.v);
        }
    }
    out
}

fn write_checkpoint(path: &Path, model: &Tokenizer, train: Option<TrainStateHeader>, opt: Option<(&Adam, &Adam)>) -> Result<()> {
    let pending = collect_entries(model, opt);
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        encoder: (&model.encoder.config).into(),
        decoder: (&model.decoder.config).into(),
        rvq: RvqArch {
            levels: model.rvq.config.levels,
            codes: model.rvq.config.codes,
            dim: model.rvq.config.dim,
        },
        initialized: model.rvq.initialized,
        train,
        entries: pending.iter().map(|p| p.entry.clone()).collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for p in &pending {
        match &p.payload {
            Payload::F64(data) => {
                for &v in *data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Payload::F64Owned(data) => {
                for &v in data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Payload::U32(data) => {
                for &v in *data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Saves a model-only checkpoint (no optimizer or RNG state).
pub fn save_model(path: &Path, model: &Tokenizer) -> Result<()> {
    write_checkpoint(path, model, None, None)
}

/// Saves the full training state. Call `trainer.snap_to_f32()` first so the
/// in-memory state equals what the file will reproduce.
pub fn save_trainer(
    path: &Path,
    trainer: &Trainer,
    epochs_done: usize,
    best_val_mse: Option<f64>,
) -> Result<()> {
    let state = TrainStateHeader {
        config: (&trainer.config).into(),
        global_step: trainer.global_step,
        total_steps: trainer.total_steps,
        epochs_done,
        best_val_mse,
        enc_opt_step: trainer.enc_opt.step,
        dec_opt_step: trainer.dec_opt.step,
        rng: RngStateSer::capture(&trainer.rng),
    };
    write_checkpoint(path, &trainer.model, Some(state), Some((&trainer.enc_opt, &trainer.dec_opt)))
}

enum RawData {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

struct RawEntry {
    entry: Entry,
    data: RawData,
}

/// A checkpoint read back from disk.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: Tokenizer,
    pub train: Option<LoadedTrainState>,
}

/// Training state reconstructed from a checkpoint.
#[derive(Debug)]
pub struct LoadedTrainState {
    pub header: TrainStateHeader,
    pub enc_opt: Adam,
    pub dec_opt: Adam,
    pub rng: ChaCha8Rng,
}

impl LoadedCheckpoint {
    /// Rebuilds a `Trainer` mid-run; errors if the checkpoint is model-only.
    pub fn into_trainer(self) -> Result<(Trainer, usize, Option<f64>)> {
        let state = match self.train {
            Some(s) => s,
            None => bail!("checkpoint has no training state; cannot resume"),
        };
        let config: TrainConfig = (&state.header.config).into();
        config.validate()?;
        let trainer = Trainer {
            model: self.model,
            config,
            enc_opt: state.enc_opt,
            dec_opt: state.dec_opt,
            rng: state.rng,
            global_step: state.header.global_step,
            total_steps: state.header.total_steps,
        };
        Ok((trainer, state.header.epochs_done, state.header.best_val_mse))
    }
}

fn take_f64(iter: &mut std::vec::IntoIter<RawEntry>, name: &str, len: usize) -> Result<Vec<f64>> {
    match iter.next() {
        Some(raw) if raw.entry.name == name => match raw.data {
            RawData::F64(d) if d.len() == len => Ok(d),
            RawData::F64(d) => bail!("entry {name}: expected {len} values, found {}", d.len()),
            RawData::U32(_) => bail!("entry {name}: expected f32 data"),
        },
        Some(raw) => bail!("expected entry {name}, found {}", raw.entry.name),
        None => bail!("missing entry {name}"),
    }
}

fn take_u32(iter: &mut std::vec::IntoIter<RawEntry>, name: &str, len: usize) -> Result<Vec<u32>> {
    match iter.next() {
        Some(raw) if raw.entry.name == name => match raw.data {
            RawData::U32(d) if d.len() == len => Ok(d),
            RawData::U32(d) => bail!("entry {name}: expected {len} values, found {}", d.len()),
            RawData::F64(_) => bail!("entry {name}: expected u32 data"),
        },
        Some(raw) => bail!("expected entry {name}, found {}", raw.entry.name),
        None => bail!("missing entry {name}"),
    }
}

fn apply_mlp(mlp: &mut Mlp, prefix: &str, iter: &mut std::vec::IntoIter<RawEntry>) -> Result<()> {
    let mut expected = Vec::new();
    mlp.visit_params(&mut |name, _, _, data| expected.push((format!("{prefix}/{name}"), data.len())));
    let mut values = Vec::with_capacity(expected.len());
    for (name, len) in &expected {
        values.push(take_f64(iter, name, *len)?);
    }
    let mut cursor = values.into_iter();
    mlp.visit_params_mut(&mut |_, params| {
        let v = cursor.next().expect("one array per parameter group");
        params.copy_from_slice(&v);
    });
    Ok(())
}

/// Reads and validates a checkpoint.
pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .with_context(|| format!("reading {}", path.display()))?;
    if magic != CHECKPOINT_MAGIC {
        bail!("{}: not a checkpoint (bad magic)", path.display());
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .with_context(|| format!("{}: parsing header", path.display()))?;
    if header.format_version != CHECKPOINT_VERSION {
        bail!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            header.format_version
        );
    }

    // Payload, sequentially in header order.
    let mut raws = Vec::with_capacity(header.entries.len());
    for entry in &header.entries {
        let n = entry.rows * entry.cols;
        let data = match entry.dtype {
            Dtype::F32 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)
                    .with_context(|| format!("{}: payload of {}", path.display(), entry.name))?;
                RawData::F64(
                    buf.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                        .collect(),
                )
            }
            Dtype::U32 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)
                    .with_context(|| format!("{}: payload of {}", path.display(), entry.name))?;
                RawData::U32(
                    buf.chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
        };
        raws.push(RawEntry {
            entry: entry.clone(),
            data,
        });
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        bail!("{}: trailing bytes after payload", path.display());
    }

    // Rebuild the model skeleton, then overwrite every array.
    let enc_cfg: MlpConfig = (&header.encoder).into();
    let dec_cfg: MlpConfig = (&header.decoder).into();
    let rvq_cfg = RvqConfig {
        levels: header.rvq.levels,
        codes: header.rvq.codes,
        dim: header.rvq.dim,
    };
    let mut build_rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Tokenizer::with_configs(enc_cfg, dec_cfg, rvq_cfg, &mut build_rng)?;

    let mut iter = raws.into_iter();
    apply_mlp(&mut model.encoder, "encoder", &mut iter)?;
    apply_mlp(&mut model.decoder, "decoder", &mut iter)?;
    for l in 0..header.rvq.levels {
        let codes = header.rvq.codes;
        let dim = header.rvq.dim;
        let book = &mut model.rvq.books[l];
        book.vectors
            .data_mut()
            .copy_from_slice(&take_f64(&mut iter, &format!("rvq/level{l}/vectors"), codes * dim)?);
        book.sum_ema
            .data_mut()
            .copy_from_slice(&take_f64(&mut iter, &format!("rvq/level{l}/sum_ema"), codes * dim)?);
        book.usage_ema
            .copy_from_slice(&take_f64(&mut iter, &format!("rvq/level{l}/usage_ema"), codes)?);
        book.steps_since_use.copy_from_slice(&take_u32(
            &mut iter,
            &format!("rvq/level{l}/steps_since_use"),
            codes,
        )?);
    }
    model.rvq.initialized = header.initialized;

    let train = match header.train {
        None => {
            if iter.next().is_some() {
                bail!("{}: unexpected extra entries", path.display());
            }
            None
        }
        Some(state) => {
            let enc_params = model.encoder.param_count();
            let dec_params = model.decoder.param_count();
            let mut enc_opt = Adam::new(enc_params);
            enc_opt.m = take_f64(&mut iter, "opt/encoder/m", enc_params)?;
            enc_opt.v = take_f64(&mut iter, "opt/encoder/v", enc_params)?;
            enc_opt.step = state.enc_opt_step;
            let mut dec_opt = Adam::new(dec_params);
            dec_opt.m = take_f64(&mut iter, "opt/decoder/m", dec_params)?;
            dec_opt.v = take_f64(&mut iter, "opt/decoder/v", dec_params)?;
            dec_opt.step = state.dec_opt_step;
            if iter.next().is_some() {
                bail!("{}: unexpected extra entries", path.display());
            }
            let rng = state.rng.restore()?;
            Some(LoadedTrainState {
                header: state,
                enc_opt,
                dec_opt,
                rng,
            })
        }
    };

    Ok(LoadedCheckpoint { model, train })
}

/// Loads just the model from a checkpoint, discarding any training state.
pub fn load_model(path: &Path) -> Result<Tokenizer> {
    Ok(load(path)?.model)
}
