//! `tstok rl-demo`: group-relative policy-gradient toy run on token prompts.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tstok_core::demo::{log_csv, max_drawdown, rl_demo, DemoConfig, DemoTask};
use tstok_core::grpo::AdvantageVariant;

use crate::checkpoint;
use crate::manifest::{digest_file, load_config, resolve_out_dir, write_manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskOpt {
    Classify,
    Forecast,
}

impl From<TaskOpt> for DemoTask {
    fn from(value: TaskOpt) -> Self {
        match value {
            TaskOpt::Classify => DemoTask::Classify,
            TaskOpt::Forecast => DemoTask::Forecast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantOpt {
    Grpo,
    Dapo,
}

impl From<VariantOpt> for AdvantageVariant {
    fn from(value: VariantOpt) -> Self {
        match value {
            VariantOpt::Grpo => AdvantageVariant::Grpo,
            VariantOpt::Dapo => AdvantageVariant::Dapo,
        }
    }
}

#[derive(Args)]
pub struct RlDemoArgs {
    /// Config file (bare config or a previous manifest.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint whose token space the policy works in.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskOpt>,
    #[arg(long, value_enum)]
    variant: Option<VariantOpt>,
    #[arg(long)]
    steps: Option<usize>,
    /// Completions sampled per prompt.
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// PPO-style ratio clip range.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $TSTOK_OUT/rl-demo or runs/rl-demo).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RlDemoCliConfig {
    pub model: String,
    pub task: TaskOpt,
    pub variant: VariantOpt,
    pub steps: usize,
    pub group: usize,
    pub lr: f64,
    pub clip: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RlDemoCliConfig {
    fn default() -> Self {
        let base = DemoConfig::classify();
        Self {
            model: String::new(),
            task: TaskOpt::Classify,
            variant: VariantOpt::Grpo,
            steps: base.steps,
            group: base.group,
            lr: base.lr,
            clip: base.clip,
            temperature: base.temperature,
            seed: base.seed,
        }
    }
}

#[derive(Serialize)]
struct Report {
    task: TaskOpt,
    variant: VariantOpt,
    steps: usize,
    final_accuracy: f64,
    final_reward: f64,
    /// Largest dip of the 50-step reward moving average below its peak.
    ma_drawdown: f64,
}

pub fn run(args: RlDemoArgs) -> Result<()> {
    let mut config: RlDemoCliConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => RlDemoCliConfig::default(),
    };
    if let Some(model) = &args.model {
        config.model = model.display().to_string();
    }
    if let Some(v) = args.task {
        config.task = v;
    }
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.group {
        config.group = v;
    }
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.clip {
        config.clip = v;
    }
    if let Some(v) = args.temperature {
        config.temperature = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if config.model.is_empty() {
        bail!("no checkpoint given (use --model or a config file)");
    }

    let out_dir = resolve_out_dir(args.out, "rl-demo")?;
    let model_path = PathBuf::from(&config.model);
    let model = checkpoint::load_model(&model_path)?;
    let base = match config.task {
        TaskOpt::Classify => DemoConfig::classify(),
        TaskOpt::Forecast => DemoConfig::forecast(),
    };
    let demo_config = DemoConfig {
        task: config.task.into(),
        variant: config.variant.into(),
        steps: config.steps,
        group: config.group,
        lr: config.lr,
        clip: config.clip,
        temperature: config.temperature,
        seed: config.seed,
        ..base
    };
    let report = rl_demo(&model, &demo_config)?;

    fs::write(out_dir.join("demo_log.csv"), log_csv(&report))?;
    let out = Report {
        task: config.task,
        variant: config.variant,
        steps: config.steps,
        final_accuracy: report.final_accuracy,
        final_reward: report.final_reward,
        ma_drawdown: max_drawdown(&report.reward_moving_average()),
    };
    let mut report_json = serde_json::to_string_pretty(&out)?;
    report_json.push('\n');
    fs::write(out_dir.join("report.json"), report_json)?;

    let inputs = vec![digest_file(&model_path)?];
    write_manifest(
        &out_dir,
        "rl-demo",
        &config,
        &inputs,
        &[String::from("demo_log.csv"), String::from("report.json")],
    )?;
    println!(
        "rl-demo {:?}/{:?}: final_accuracy {:.4} final_reward {:.4} ma_drawdown {:.4}",
        config.task, config.variant, out.final_accuracy, out.final_reward, out.ma_drawdown
    );
    Ok(())
}
