//! `tstok score`: grade completions with the verifiable reward engine.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tstok_core::rewards::{score_completion, RewardSpec, Task};
use tstok_core::Tokenizer;

use crate::checkpoint;
use crate::io::write_json_line;
use crate::manifest::{digest_file, load_config, resolve_out_dir, write_manifest};

#[derive(Args)]
pub struct ScoreArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Completions file (JSONL; see the input schema in the README).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Default task for records that do not set one.
    #[arg(long)]
    task: Option<String>,
    /// Default target: a label for classification, or comma/space-separated
    /// numbers for forecasting.
    #[arg(long)]
    target: Option<String>,
    /// Optional checkpoint for decoding token-stream forecast answers.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory (default: $TSTOK_OUT/score or runs/score).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub input: String,
    pub task: Option<String>,
    pub target: Option<String>,
    pub model: Option<String>,
}

/// Either a class label or a numeric horizon.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum TargetField {
    Label(String),
    Horizon(Vec<f64>),
}

/// One input line: a completion plus (optionally) its grading target. Records
/// may omit `task`/`target` when the command supplies defaults.
#[derive(Deserialize)]
struct CompletionRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    /// "classification" or "forecasting"; inferred from the target when absent.
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    target: Option<TargetField>,
    #[serde(default)]
    w_correct: Option<f64>,
    #[serde(default)]
    w_format: Option<f64>,
}

#[derive(Serialize)]
struct ScoreRow {
    id: String,
    format_score: f64,
    correctness: f64,
    total: f64,
    diagnostics: String,
}

#[derive(Serialize)]
struct Summary {
    count: usize,
    mean_total: f64,
    mean_correctness: f64,
    mean_format: f64,
}

/// Normalizes task aliases: `mcq` means classification, `forecast` means
/// forecasting.
fn canonical_task(name: &str, line: usize) -> Result<&'static str> {
    match name {
        "classification" | "mcq" => Ok("classification"),
        "forecasting" | "forecast" => Ok("forecasting"),
        other => bail!("line {line}: unknown task `{other}`"),
    }
}

/// Parses a command-level `--target` string in light of the task name.
fn default_target(task: Option<&str>, target: &str) -> Result<TargetField> {
    if task == Some("forecasting") {
        let values: Vec<f64> = target
            .split([',', ' '])
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().with_context(|| format!("parsing target number `{t}`")))
            .collect::<Result<_>>()?;
        Ok(TargetField::Horizon(values))
    } else {
        Ok(TargetField::Label(target.to_string()))
    }
}

fn spec_for(
    record: &CompletionRecord,
    fallback_task: Option<&str>,
    fallback_target: Option<&TargetField>,
    line: usize,
) -> Result<RewardSpec> {
    let task_name = match record.task.as_deref() {
        Some(name) => Some(canonical_task(name, line)?),
        None => fallback_task,
    };
    let target = match (&record.target, fallback_target) {
        (Some(t), _) => t,
        (None, Some(t)) => t,
        (None, None) => bail!("line {line}: no target (set one in the record or via --target)"),
    };
    let task = match (task_name, target) {
        (Some("classification") | None, TargetField::Label(label)) => Task::Classification {
            target: label.clone(),
        },
        (Some("forecasting") | None, TargetField::Horizon(horizon)) => Task::Forecasting {
            target: horizon.clone(),
        },
        (Some(task), _) => bail!(
            "line {line}: task `{task}` does not match the target type \
             (labels are strings, horizons are number arrays)"
        ),
    };
    let mut spec = match task {
        Task::Classification { ref target } => RewardSpec::classification(target),
        Task::Forecasting { target } => RewardSpec::forecasting(target),
    };
    if let Some(w) = record.w_correct {
        spec.w_correct = w;
    }
    if let Some(w) = record.w_format {
        spec.w_format = w;
    }
    Ok(spec)
}

pub fn run(args: ScoreArgs) -> Result<()> {
    let mut config: ScoreConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => ScoreConfig::default(),
    };
    if let Some(input) = &args.input {
        config.input = input.display().to_string();
    }
    if let Some(task) = &args.task {
        config.task = Some(task.clone());
    }
    if let Some(target) = &args.target {
        config.target = Some(target.clone());
    }
    if let Some(model) = &args.model {
        config.model = Some(model.display().to_string());
    }
    if config.input.is_empty() {
        bail!("no completions file given (use --input or a config file)");
    }

    let out_dir = resolve_out_dir(args.out, "score")?;
    let input_path = PathBuf::from(&config.input);
    let fallback_task = match config.task.as_deref() {
        Some("classification" | "mcq") => Some("classification"),
        Some("forecasting" | "forecast") => Some("forecasting"),
        Some(other) => bail!("unknown task `{other}` (classification|mcq|forecasting|forecast)"),
        None => None,
    };
    let fallback_target = match &config.target {
        Some(t) => Some(default_target(fallback_task, t)?),
        None => None,
    };
    let model: Option<Tokenizer> = match &config.model {
        Some(path) => Some(checkpoint::load_model(&PathBuf::from(path))?),
        None => None,
    };

    let file = fs::File::open(&input_path)
        .with_context(|| format!("opening {}", input_path.display()))?;
    let reader = BufReader::new(file);
    let rows_path = out_dir.join("scores.jsonl");
    let out_file = fs::File::create(&rows_path)
        .with_context(|| format!("creating {}", rows_path.display()))?;
    let mut writer = BufWriter::new(out_file);
    let mut count = 0usize;
    let mut sums = (0.0, 0.0, 0.0);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let record: CompletionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{lineno}", input_path.display()))?;
        let spec = spec_for(&record, fallback_task, fallback_target.as_ref(), lineno)?;
        let result = score_completion(&spec, &record.text, model.as_ref())
            .with_context(|| format!("{}:{lineno}", input_path.display()))?;
        sums.0 += result.total;
        sums.1 += result.correctness;
        sums.2 += result.format_score;
        count += 1;
        write_json_line(
            &mut writer,
            &ScoreRow {
                id: record.id.unwrap_or_else(|| format!("line-{lineno}")),
                format_score: result.format_score,
                correctness: result.correctness,
                total: result.total,
                diagnostics: result.diagnostics,
            },
        )?;
    }
    drop(writer);
    if count == 0 {
        bail!("{} holds no completions", input_path.display());
    }

    let summary = Summary {
        count,
        mean_total: sums.0 / count as f64,
        mean_correctness: sums.1 / count as f64,
        mean_format: sums.2 / count as f64,
    };
    let mut summary_json = serde_json::to_string_pretty(&summary)?;
    summary_json.push('\n');
    fs::write(out_dir.join("summary.json"), summary_json)?;

    let mut inputs = vec![digest_file(&input_path)?];
    if let Some(path) = &config.model {
        inputs.push(digest_file(&PathBuf::from(path))?);
    }
    write_manifest(
        &out_dir,
        "score",
        &config,
        &inputs,
        &[String::from("scores.jsonl"), String::from("summary.json")],
    )?;
    println!(
        "scored {} completions: mean_total {:.4} mean_correctness {:.4} mean_format {:.4}",
        summary.count, summary.mean_total, summary.mean_correctness, summary.mean_format
    );
    Ok(())
}
