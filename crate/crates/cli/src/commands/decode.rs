//! `tstok decode`: token streams -> reconstructed series.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::io;
use crate::manifest::{digest_file, load_config, resolve_out_dir, write_manifest};

#[derive(Args)]
pub struct DecodeArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint to decode with.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Stream file (JSONL of rendered streams, or the binary container).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (default: $TSTOK_OUT/decode or runs/decode).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub model: String,
    pub input: String,
}

pub fn run(args: DecodeArgs) -> Result<()> {
    let mut config: DecodeConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => DecodeConfig::default(),
    };
    if let Some(model) = &args.model {
        config.model = model.display().to_string();
    }
    if let Some(input) = &args.input {
        config.input = input.display().to_string();
    }
    if config.model.is_empty() {
        bail!("no checkpoint given (use --model or a config file)");
    }
    if config.input.is_empty() {
        bail!("no input stream file given (use --input or a config file)");
    }

    let out_dir = resolve_out_dir(args.out, "decode")?;
    let model_path = PathBuf::from(&config.model);
    let input_path = PathBuf::from(&config.input);
    let model = checkpoint::load_model(&model_path)?;
    if !model.is_trained() {
        bail!(
            "checkpoint {} has uninitialized codebooks; train it first",
            model_path.display()
        );
    }
    let streams = io::read_streams(&input_path)?;
    let mut decoded = Vec::with_capacity(streams.len());
    let mut samples = 0usize;
    for (id, stream) in &streams {
        let series = model
            .decode_series(stream, id)
            .with_context(|| format!("decoding stream `{id}`"))?;
        samples += series.values.len();
        decoded.push(series);
    }

    let out_path = out_dir.join("decoded.jsonl");
    io::write_series_jsonl(&out_path, &decoded)?;
    let inputs = vec![digest_file(&model_path)?, digest_file(&input_path)?];
    write_manifest(
        &out_dir,
        "decode",
        &config,
        &inputs,
        &[String::from("decoded.jsonl")],
    )?;
    println!(
        "decoded {} streams ({} samples) -> {}",
        decoded.len(),
        samples,
        out_path.display()
    );
    Ok(())
}
