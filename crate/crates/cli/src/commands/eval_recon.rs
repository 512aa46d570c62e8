//! `tstok eval-recon`: round-trip reconstruction quality of a checkpoint.

use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tstok_core::codec::scaled_matrix;
use tstok_core::rewards::smape;
use tstok_core::series::{unscale, PATCH_LEN};
use tstok_core::tensor::Tensor2D;

use crate::checkpoint;
use crate::io::{self, write_json_line, NanPolicy};
use crate::manifest::{digest_file, load_config, resolve_out_dir, write_manifest};

#[derive(Args)]
pub struct EvalReconArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Series file (JSONL or CSV).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Policy for non-finite samples at ingestion.
    #[arg(long, value_enum)]
    nan: Option<NanPolicy>,
    /// Output directory (default: $TSTOK_OUT/eval-recon or runs/eval-recon).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalReconConfig {
    pub model: String,
    pub input: String,
    pub nan: NanPolicy,
}

impl Default for EvalReconConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            input: String::new(),
            nan: NanPolicy::Repair,
        }
    }
}

/// Per-series metrics row of `per_series.jsonl`.
#[derive(Serialize)]
struct SeriesRow {
    id: String,
    n: usize,
    patches: usize,
    /// MSE between scaled patches and their reconstructions.
    scaled_mse: f64,
    /// Mean per-patch SMAPE in the scaled domain.
    smape: f64,
    /// MSE between raw samples and the unscaled reconstruction.
    raw_mse: f64,
}

#[derive(Serialize)]
struct Summary {
    series: usize,
    patches: usize,
    samples: usize,
    /// Patch-pooled MSE in the scaled domain (the training objective).
    mean_scaled_mse: f64,
    /// Mean per-patch SMAPE in the scaled domain.
    mean_patch_smape: f64,
    /// Sample-pooled MSE in the raw domain.
    mean_raw_mse: f64,
}

pub fn run(args: EvalReconArgs) -> Result<()> {
    let mut config: EvalReconConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => EvalReconConfig::default(),
    };
    if let Some(model) = &args.model {
        config.model = model.display().to_string();
    }
    if let Some(input) = &args.input {
        config.input = input.display().to_string();
    }
    if let Some(nan) = args.nan {
        config.nan = nan;
    }
    if config.model.is_empty() {
        bail!("no checkpoint given (use --model or a config file)");
    }
    if config.input.is_empty() {
        bail!("no input series file given (use --input or a config file)");
    }

    let out_dir = resolve_out_dir(args.out, "eval-recon")?;
    let model_path = PathBuf::from(&config.model);
    let input_path = PathBuf::from(&config.input);
    let model = checkpoint::load_model(&model_path)?;
    if !model.is_trained() {
        bail!(
            "checkpoint {} has uninitialized codebooks; an epochs-0 training \
             run produces an evaluable untrained checkpoint",
            model_path.display()
        );
    }
    let series = io::read_series(&input_path, config.nan)?;
    if series.is_empty() {
        bail!("{} holds no series", input_path.display());
    }

    let rows_path = out_dir.join("per_series.jsonl");
    let file = fs::File::create(&rows_path)
        .with_context(|| format!("creating {}", rows_path.display()))?;
    let mut writer = BufWriter::new(file);
    let mut total_patches = 0usize;
    let mut total_samples = 0usize;
    let mut scaled_se = 0.0;
    let mut smape_sum = 0.0;
    let mut raw_se = 0.0;
    for s in &series {
        let patches = model.patches(s)?;
        let scaled = scaled_matrix(&patches);
        let embeddings = model.encoder.infer(&scaled)?;
        let codes = model.rvq.quantize_batch(&embeddings)?;
        let mut quantized = Tensor2D::zeros(scaled.rows(), model.rvq.config.dim);
        for (row, code) in codes.iter().enumerate() {
            quantized.row_mut(row).copy_from_slice(&code.quantized);
        }
        let decoded = model.decoder.infer(&quantized)?;

        let mut series_scaled_se = 0.0;
        let mut series_smape = 0.0;
        let mut raw_recon: Vec<f64> = Vec::with_capacity(patches.len() * PATCH_LEN);
        for (row, patch) in patches.iter().enumerate() {
            let recon = decoded.row(row);
            for (r, x) in recon.iter().zip(patch.scaled.iter()) {
                let diff = r - x;
                series_scaled_se += diff * diff;
            }
            series_smape += smape(&patch.scaled, recon)?;
            let mut buf = [0.0f64; PATCH_LEN];
            buf.copy_from_slice(recon);
            raw_recon.extend_from_slice(&unscale(&buf, patch.scale_exp)?);
        }
        raw_recon.truncate(s.values.len());
        let series_raw_se: f64 = raw_recon
            .iter()
            .zip(s.values.iter())
            .map(|(r, x)| (r - x) * (r - x))
            .sum();

        let n_patch_samples = (patches.len() * PATCH_LEN) as f64;
        write_json_line(
            &mut writer,
            &SeriesRow {
                id: s.id.clone(),
                n: s.values.len(),
                patches: patches.len(),
                scaled_mse: series_scaled_se / n_patch_samples,
                smape: series_smape / patches.len() as f64,
                raw_mse: series_raw_se / s.values.len() as f64,
            },
        )?;
        total_patches += patches.len();
        total_samples += s.values.len();
        scaled_se += series_scaled_se;
        smape_sum += series_smape;
        raw_se += series_raw_se;
    }
    drop(writer);

    let summary = Summary {
        series: series.len(),
        patches: total_patches,
        samples: total_samples,
        mean_scaled_mse: scaled_se / (total_patches * PATCH_LEN) as f64,
        mean_patch_smape: smape_sum / total_patches as f64,
        mean_raw_mse: raw_se / total_samples as f64,
    };
    let summary_path = out_dir.join("summary.json");
    let mut summary_json = serde_json::to_string_pretty(&summary)?;
    summary_json.push('\n');
    fs::write(&summary_path, summary_json)?;

    let inputs = vec![digest_file(&model_path)?, digest_file(&input_path)?];
    write_manifest(
        &out_dir,
        "eval-recon",
        &config,
        &inputs,
        &[String::from("per_series.jsonl"), String::from("summary.json")],
    )?;
    println!(
        "eval-recon: {} series / {} patches; scaled_mse {:.6} smape {:.4} raw_mse {:.6e}",
        summary.series,
        summary.patches,
        summary.mean_scaled_mse,
        summary.mean_patch_smape,
        summary.mean_raw_mse
    );
    Ok(())
}
