//! `tstok train`: fit the tokenizer on a corpus and write checkpoints.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tstok_core::train::{collect_patches, EpochMetrics, TrainConfig, Trainer, TrainEvent};
use tstok_core::Tokenizer;

use crate::checkpoint::{self, EstimatorOpt, ScheduleOpt, TrainConfigSer};
use crate::io::{write_json_line, NanPolicy};
use crate::manifest::{digest_file, load_config, resolve_out_dir, write_manifest};

#[derive(Args)]
pub struct TrainArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file (series JSONL or CSV). Required here or in the config.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Resume from a checkpoint with training state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory (default: $TSTOK_OUT/train or runs/train).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy for non-finite samples at ingestion.
    #[arg(long, value_enum)]
    nan: Option<NanPolicy>,
    /// Train fraction of the corpus split.
    #[arg(long)]
    split: Option<f64>,
    /// Seed for the split shuffle.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Seed for network weight initialization.
    #[arg(long)]
    model_seed: Option<u64>,
    /// Training seed (shuffling, k-means, expiration draws).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleOpt>,
    /// Commitment loss weight.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    ema_decay: Option<f64>,
    /// Batches without assignment before a code is expired.
    #[arg(long)]
    dead_code_threshold: Option<u32>,
    /// Disable dead-code expiration.
    #[arg(long)]
    no_expiration: bool,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorOpt>,
    /// Seed codebooks from random embedding rows instead of k-means.
    #[arg(long)]
    random_init: bool,
    /// Embeddings used for codebook initialization.
    #[arg(long)]
    init_sample: Option<usize>,
    /// Checkpoint cadence in epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCliConfig {
    pub corpus: String,
    pub resume: Option<String>,
    pub nan: NanPolicy,
    pub split: f64,
    pub split_seed: u64,
    pub model_seed: u64,
    #[serde(flatten)]
    pub train: TrainConfigSer,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        Self {
            corpus: String::new(),
            resume: None,
            nan: NanPolicy::Repair,
            split: 0.9,
            split_seed: 0,
            model_seed: 0,
            train: TrainConfigSer::default(),
        }
    }
}

/// Epoch row of `metrics.csv`.
fn csv_header(levels: usize) -> String {
    let mut h = String::from("epoch,mean_recon_mse,mean_commit,mean_total,val_mse,val_smape,expired");
    for l in 1..=levels {
        h.push_str(&format!(",util_l{l}"));
    }
    for l in 1..=levels {
        h.push_str(&format!(",perp_l{l}"));
    }
    h.push('\n');
    h
}

fn csv_row(m: &EpochMetrics) -> String {
    let mut row = format!(
        "{},{},{},{},{},{},{}",
        m.epoch, m.mean_recon_mse, m.mean_commit, m.mean_total, m.val_mse, m.val_smape, m.expired
    );
    for u in &m.utilization_pct {
        row.push_str(&format!(",{u}"));
    }
    for p in &m.perplexity {
        row.push_str(&format!(",{p}"));
    }
    row.push('\n');
    row
}

#[derive(Serialize)]
struct StepRow {
    step: u64,
    lr: f64,
    recon_mse: f64,
    commit: f64,
    total: f64,
    expired: usize,
}

#[derive(Serialize)]
struct FitReportOut {
    baseline_val_mse: Option<f64>,
    baseline_val_smape: Option<f64>,
    best_epoch: Option<usize>,
    best_val_mse: Option<f64>,
    final_val_mse: f64,
    final_val_smape: f64,
    epochs_done: usize,
    total_steps: u64,
    train_patches: usize,
    val_patches: usize,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut config: TrainCliConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => TrainCliConfig::default(),
    };
    if let Some(corpus) = &args.corpus {
        config.corpus = corpus.display().to_string();
    }
    if let Some(resume) = &args.resume {
        config.resume = Some(resume.display().to_string());
    }
    if let Some(nan) = args.nan {
        config.nan = nan;
    }
    if let Some(split) = args.split {
        config.split = split;
    }
    if let Some(seed) = args.split_seed {
        config.split_seed = seed;
    }
    if let Some(seed) = args.model_seed {
        config.model_seed = seed;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.train.lr = v;
    }
    if let Some(v) = args.schedule {
        config.train.schedule = v;
    }
    if let Some(v) = args.beta {
        config.train.beta = v;
    }
    if let Some(v) = args.ema_decay {
        config.train.ema_decay = v;
    }
    if let Some(v) = args.dead_code_threshold {
        config.train.dead_code_threshold = v;
    }
    if args.no_expiration {
        config.train.expiration = false;
    }
    if let Some(v) = args.estimator {
        config.train.estimator = v;
    }
    if args.random_init {
        config.train.kmeans_init = false;
    }
    if let Some(v) = args.init_sample {
        config.train.init_sample = v;
    }
    if let Some(v) = args.checkpoint_every {
        config.train.checkpoint_every = v;
    }
    if config.corpus.is_empty() {
        bail!("no corpus file given (use --corpus or a config file)");
    }

    let out_dir = resolve_out_dir(args.out, "train")?;
    let corpus_path = PathBuf::from(&config.corpus);
    let series = crate::io::read_series(&corpus_path, config.nan)?;
    let (train_series, val_series) =
        tstok_core::corpus::split(series, config.split, config.split_seed)?;
    if train_series.is_empty() || val_series.is_empty() {
        bail!(
            "split {} leaves an empty side ({} train / {} val series)",
            config.split,
            train_series.len(),
            val_series.len()
        );
    }
    let train_rows = collect_patches(&train_series)?;
    let val_rows = collect_patches(&val_series)?;
    println!(
        "train: {} series / {} patches; val: {} series / {} patches",
        train_series.len(),
        train_rows.rows(),
        val_series.len(),
        val_rows.rows()
    );

    let train_config: TrainConfig = (&config.train).into();
    // Epochs count as "requested" only when they came from a flag or config
    // file; otherwise a resumed run keeps the checkpoint's own target.
    let epochs_requested = args.epochs.is_some() || args.config.is_some();
    let (mut trainer, epochs_done, mut best_val_mse) = match &config.resume {
        Some(path) => {
            let loaded = checkpoint::load(&PathBuf::from(path))?;
            let (mut trainer, epochs_done, best) = loaded.into_trainer()?;
            // Only the epoch budget may change on resume; everything else
            // comes from the checkpoint so the continuation stays faithful.
            if epochs_requested {
                trainer.config.epochs = train_config.epochs;
            }
            config.train = (&trainer.config).into();
            if epochs_done >= trainer.config.epochs {
                bail!(
                    "checkpoint already covers {epochs_done} epochs; raise --epochs to continue"
                );
            }
            (trainer, epochs_done, best)
        }
        None => {
            train_config.validate()?;
            let model = Tokenizer::init(config.model_seed)?;
            (Trainer::new(model, train_config)?, 0usize, None)
        }
    };

    let init_reports = trainer.ensure_initialized(&train_rows)?;
    for report in &init_reports {
        println!(
            "  k-means level {}: {} iterations, inertia {:.6}{}",
            report.level,
            report.iterations,
            report.inertia,
            if report.fallback { " (random fallback)" } else { "" }
        );
    }
    let steps_per_epoch = train_rows.rows().div_ceil(trainer.config.batch_size) as u64;
    trainer.total_steps = trainer.config.epochs as u64 * steps_per_epoch;

    let fresh = epochs_done == 0;
    let baseline = if fresh {
        let (mse, smape) = trainer.evaluate(&val_rows)?;
        println!("baseline: val_mse {mse:.6} val_smape {smape:.4}");
        Some((mse, smape))
    } else {
        None
    };

    let metrics_path = out_dir.join("metrics.csv");
    let steps_path = out_dir.join("steps.jsonl");
    let mut metrics_csv = String::new();
    if fresh {
        metrics_csv.push_str(&csv_header(trainer.model.rvq.config.levels));
    } else if let Ok(existing) = fs::read_to_string(&metrics_path) {
        // Continue the file from the interrupted run when resuming in place.
        metrics_csv = existing;
    } else {
        metrics_csv.push_str(&csv_header(trainer.model.rvq.config.levels));
    }
    let steps_file = if fresh {
        fs::File::create(&steps_path)
    } else {
        fs::OpenOptions::new().create(true).append(true).open(&steps_path)
    }
    .with_context(|| format!("opening {}", steps_path.display()))?;
    let mut steps_writer = BufWriter::new(steps_file);

    let last_path = out_dir.join("checkpoint_last.ckpt");
    let best_path = out_dir.join("checkpoint_best.ckpt");
    let mut best_epoch = None;
    let mut last_metrics: Option<EpochMetrics> = None;
    let total_epochs = trainer.config.epochs;
    for epoch in epochs_done..total_epochs {
        let mut step_rows: Vec<StepRow> = Vec::new();
        let metrics = trainer.train_epoch(&train_rows, &val_rows, epoch, &mut |event| {
            if let TrainEvent::Step(s) = event {
                step_rows.push(StepRow {
                    step: s.step,
                    lr: s.lr,
                    recon_mse: s.recon_mse,
                    commit: s.commit,
                    total: s.total,
                    expired: s.expired,
                });
            }
        })?;
        for row in &step_rows {
            write_json_line(&mut steps_writer, row)?;
        }
        steps_writer.flush()?;
        println!(
            "epoch {}: recon {:.6} commit {:.6} val_mse {:.6} val_smape {:.4} util {:?} expired {}",
            metrics.epoch,
            metrics.mean_recon_mse,
            metrics.mean_commit,
            metrics.val_mse,
            metrics.val_smape,
            metrics
                .utilization_pct
                .iter()
                .map(|u| (u * 10.0).round() / 10.0)
                .collect::<Vec<_>>(),
            metrics.expired
        );
        metrics_csv.push_str(&csv_row(&metrics));
        fs::write(&metrics_path, &metrics_csv)?;

        let improved = best_val_mse.is_none_or(|b| metrics.val_mse < b);
        if improved {
            best_val_mse = Some(metrics.val_mse);
            best_epoch = Some(epoch);
        }
        let at_cadence = (epoch + 1 - epochs_done) % trainer.config.checkpoint_every == 0;
        let last_epoch = epoch + 1 == total_epochs;
        if at_cadence || last_epoch {
            trainer.snap_to_f32();
            checkpoint::save_trainer(&last_path, &trainer, epoch + 1, best_val_mse)?;
            if improved {
                checkpoint::save_trainer(&best_path, &trainer, epoch + 1, best_val_mse)?;
            }
        }
        last_metrics = Some(metrics);
    }

    if total_epochs == 0 {
        // Init-only run: codebooks are seeded and the baseline is recorded,
        // but no gradient step ran. The checkpoint is usable yet untrained.
        trainer.snap_to_f32();
        checkpoint::save_trainer(&last_path, &trainer, 0, best_val_mse)?;
    }
    // Weights-only export for encode/decode; the epoch loop snapped the
    // trainer at the final cadence so this matches checkpoint_last exactly.
    checkpoint::save_model(&out_dir.join("model.ckpt"), &trainer.model)?;
    let (final_val_mse, final_val_smape) = match &last_metrics {
        Some(last) => (last.val_mse, last.val_smape),
        None => baseline.expect("epochs == 0 is rejected on resume"),
    };
    let report = FitReportOut {
        baseline_val_mse: baseline.map(|b| b.0),
        baseline_val_smape: baseline.map(|b| b.1),
        best_epoch,
        best_val_mse,
        final_val_mse,
        final_val_smape,
        epochs_done: total_epochs,
        total_steps: trainer.total_steps,
        train_patches: train_rows.rows(),
        val_patches: val_rows.rows(),
    };
    let report_path = out_dir.join("fit_report.json");
    let mut report_json = serde_json::to_string_pretty(&report)?;
    report_json.push('\n');
    fs::write(&report_path, report_json)?;

    let mut inputs = vec![digest_file(&corpus_path)?];
    if let Some(resume) = &config.resume {
        inputs.push(digest_file(&PathBuf::from(resume))?);
    }
    let mut outputs: Vec<String> = vec![
        "checkpoint_last.ckpt".into(),
        "model.ckpt".into(),
        "metrics.csv".into(),
        "steps.jsonl".into(),
        "fit_report.json".into(),
    ];
    if best_path.exists() {
        outputs.insert(1, "checkpoint_best.ckpt".into());
    }
    write_manifest(&out_dir, "train", &config, &inputs, &outputs)?;
    println!(
        "trained {} epochs; final val_mse {:.6} val_smape {:.4} -> {}",
        total_epochs,
        final_val_mse,
        final_val_smape,
        last_path.display()
    );
    Ok(())
}
