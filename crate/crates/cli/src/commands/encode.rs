//! `tstok encode`: series -> token streams with a trained checkpoint.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::io::{self, NanPolicy};
use crate::manifest::{digest_file, load_config, resolve_out_dir, write_manifest};

#[derive(Args)]
pub struct EncodeArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint to encode with.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Series file (JSONL or CSV).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Policy for non-finite samples at ingestion.
    #[arg(long, value_enum)]
    nan: Option<NanPolicy>,
    /// Also write the compact binary stream container.
    #[arg(long)]
    bin: bool,
    /// Output directory (default: $TSTOK_OUT/encode or runs/encode).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeConfig {
    pub model: String,
    pub input: String,
    pub nan: NanPolicy,
    pub bin: bool,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            input: String::new(),
            nan: NanPolicy::Repair,
            bin: false,
        }
    }
}

pub fn run(args: EncodeArgs) -> Result<()> {
    let mut config: EncodeConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => EncodeConfig::default(),
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
    if args.bin {
        config.bin = true;
    }
    if config.model.is_empty() {
        bail!("no checkpoint given (use --model or a config file)");
    }
    if config.input.is_empty() {
        bail!("no input series file given (use --input or a config file)");
    }

    let out_dir = resolve_out_dir(args.out, "encode")?;
    let model_path = PathBuf::from(&config.model);
    let input_path = PathBuf::from(&config.input);
    let model = checkpoint::load_model(&model_path)?;
    if !model.is_trained() {
        bail!(
            "checkpoint {} has uninitialized codebooks; train it first",
            model_path.display()
        );
    }
    let series = io::read_series(&input_path, config.nan)?;
    let mut streams: Vec<io::NamedStream> = Vec::with_capacity(series.len());
    let mut tokens = 0usize;
    for s in &series {
        let stream = model
            .encode(s)
            .with_context(|| format!("encoding series `{}`", s.id))?;
        tokens += stream.tokens.len();
        streams.push((s.id.clone(), stream));
    }

    let jsonl_path = out_dir.join("streams.jsonl");
    io::write_streams_jsonl(&jsonl_path, &streams)?;
    let mut outputs = vec![String::from("streams.jsonl")];
    if config.bin {
        io::write_streams_binary(&out_dir.join("streams.bin"), &streams)?;
        outputs.push(String::from("streams.bin"));
    }
    let inputs = vec![digest_file(&model_path)?, digest_file(&input_path)?];
    write_manifest(&out_dir, "encode", &config, &inputs, &outputs)?;
    println!(
        "encoded {} series ({} tokens) -> {}",
        streams.len(),
        tokens,
        jsonl_path.display()
    );
    Ok(())
}
