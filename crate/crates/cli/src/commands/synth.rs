//! `tstok synth`: generate the synthetic corpus.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use tstok_core::corpus;

use crate::io::write_series_jsonl;
use crate::manifest::{load_config, resolve_out_dir, write_manifest};

#[derive(Args)]
pub struct SynthArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of series, spread evenly over the generator families.
    #[arg(long)]
    n: Option<usize>,
    /// Corpus seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $TSTOK_OUT/synth or runs/synth).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: corpus::DEFAULT_SERIES,
            seed: 0,
        }
    }
}

pub fn run(args: SynthArgs) -> Result<()> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let out_dir = resolve_out_dir(args.out, "synth")?;
    let series = corpus::default_corpus(config.seed, config.n)?;
    let corpus_path = out_dir.join("corpus.jsonl");
    write_series_jsonl(&corpus_path, &series)?;
    write_manifest(&out_dir, "synth", &config, &[], &["corpus.jsonl".into()])?;

    let patches: usize = series.iter().map(|s| s.patch_count()).sum();
    println!(
        "synth: {} series ({patches} patches) -> {}",
        series.len(),
        corpus_path.display()
    );
    Ok(())
}
