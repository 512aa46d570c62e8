//! `tstok`: command-line driver for the series ↔ token pipeline.
//!
//! Every subcommand resolves its configuration as defaults < config file <
//! flags, writes its artifacts under one output directory, and drops a
//! `manifest.json` there with the fully resolved configuration so the run
//! can be reproduced from the manifest alone (`--config manifest.json`).

mod checkpoint;
mod commands;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "tstok",
    version,
    about = "Time-series tokenization pipeline: synthesize corpora, train the \
             tokenizer, encode/decode streams, evaluate reconstruction, score \
             completions, and run the RL demo"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as series JSONL.
    Synth(commands::synth::SynthArgs),
    /// Train the tokenizer (autoencoder + codebooks) on a corpus.
    Train(commands::train::TrainArgs),
    /// Encode series into token streams with a trained checkpoint.
    Encode(commands::encode::EncodeArgs),
    /// Decode token streams back into series.
    Decode(commands::decode::DecodeArgs),
    /// Score encode→decode reconstruction error per series.
    EvalRecon(commands::eval_recon::EvalReconArgs),
    /// Score completions against verifiable reward specs.
    Score(commands::score::ScoreArgs),
    /// Train a toy policy with group-relative advantages on tokenized tasks.
    RlDemo(commands::rl_demo::RlDemoArgs),
}

fn main() -> ExitCode {
    // clap exits 2 by itself on unknown flags / bad usage.
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Encode(args) => commands::encode::run(args),
        Command::Decode(args) => commands::decode::run(args),
        Command::EvalRecon(args) => commands::eval_recon::run(args),
        Command::Score(args) => commands::score::run(args),
        Command::RlDemo(args) => commands::rl_demo::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
