//! Desk-scale RL demonstration: a toy policy learns verifiable tasks over
//! tokenized series with group-relative policy gradients.
//!
//! Two generated task families:
//! - `Classify`: name the waveform family (sine / trend / noise) of a
//!   tokenized series; reward is exact-match correctness.
//! - `Forecast`: emit the 4 tokens of the next patch; the emitted patch is
//!   rendered as a token stream, decoded, and scored `2 - SMAPE` against the
//!   true continuation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::Tokenizer;
use crate::error::{CoreError, Result};
use crate::grpo::{
    mean_kl, policy_gradient_step, AdvantageVariant, Rollout, RolloutGroup, ToyPolicy,
    DEFAULT_CLIP, DEFAULT_GROUP,
};
use crate::rewards::{score_completion, RewardSpec};
use crate::series::{Series, PATCH_LEN, SCALE_EXP_MIN};
use crate::stream::TokenStream;
use crate::train::{lr_at, LrSchedule};
use crate::vocab::{LEVEL_BASE, LEVEL_TOKENS, SCALE_TOKENS, VOCAB_SIZE};

/// Class labels for the classification task.
pub const CLASS_LABELS: [&str; 3] = ["sine", "trend", "noise"];
/// Embedding rows past the tokenizer vocabulary, one per class label.
pub const TEXT_TOKENS: usize = CLASS_LABELS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoTask {
    Classify,
    Forecast,
}

/// Settings for one demo run.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub task: DemoTask,
    pub variant: AdvantageVariant,
    pub steps: usize,
    pub group: usize,
    pub lr: f64,
    /// Decaying the step size toward the end of the run keeps a
    /// near-deterministic policy from being knocked off a good solution by
    /// one unlucky group.
    pub schedule: LrSchedule,
    pub clip: f64,
    pub temperature: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl DemoConfig {
    pub fn classify() -> Self {
        Self {
            task: DemoTask::Classify,
            variant: AdvantageVariant::Grpo,
            steps: 500,
            group: DEFAULT_GROUP,
            lr: 0.05,
            schedule: LrSchedule::Cosine,
            clip: DEFAULT_CLIP,
            temperature: 1.0,
            seed: 0,
            embed_dim: 32,
            hidden: 32,
            blocks: 1,
        }
    }

    pub fn forecast() -> Self {
        Self {
            task: DemoTask::Forecast,
            ..Self::classify()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group < 2 {
            return Err(CoreError::invalid_config("group size must be at least 2"));
        }
        if self.steps == 0 {
            return Err(CoreError::invalid_config("step count must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(CoreError::invalid_config("lr and clip must be positive"));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoStepLog {
    pub step: usize,
    /// Mean composite reward over the group.
    pub mean_reward: f64,
    /// Mean correctness normalized to `[0, 1]`.
    pub accuracy: f64,
    /// Fraction of completions with well-formed tags.
    pub format_rate: f64,
    /// KL of the current policy to the initial policy on this prompt.
    pub kl: f64,
    /// Fraction of tokens hitting the clip branch.
    pub clip_fraction: f64,
}

/// Full run output.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub task: DemoTask,
    pub variant: AdvantageVariant,
    pub logs: Vec<DemoStepLog>,
    /// Mean accuracy over the final 50 steps.
    pub final_accuracy: f64,
    /// Mean reward over the final 50 steps.
    pub final_reward: f64,
}

impl DemoReport {
    /// 50-step moving average of the reward curve.
    pub fn reward_moving_average(&self) -> Vec<f64> {
        moving_average(
            &self.logs.iter().map(|l| l.mean_reward).collect::<Vec<_>>(),
            50,
        )
    }
}

/// Sliding-window mean; output has `len - window + 1` points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let inv = 1.0 / window as f64;
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut acc: f64 = values[..window].iter().sum();
    out.push(acc * inv);
    for i in window..values.len() {
        acc += values[i] - values[i - window];
        out.push(acc * inv);
    }
    out
}

/// Largest drop of a sequence below its running maximum (0 when the
/// sequence never dips).
pub fn max_drawdown(values: &[f64]) -> f64 {
    let mut run_max = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        run_max = run_max.max(v);
        worst = worst.max(run_max - v);
    }
    worst
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Generates one classification example: `(series, class index)`.
fn classify_example<R: Rng>(rng: &mut R, len: usize) -> (Series, usize) {
    let class = rng.random_range(0..3usize);
    let amp = 0.5 + 1.5 * rng.random::<f64>();
    let values: Vec<f64> = match class {
        0 => {
            // At least 3 cycles per patch so a sine patch never reads as a
            // smooth ramp.
            let cycles = (12.0 + 32.0 * rng.random::<f64>()) * len as f64 / 256.0;
            let phase = rng.random::<f64>() * core::f64::consts::TAU;
            (0..len)
                .map(|t| amp * libm::sin(core::f64::consts::TAU * cycles * t as f64 / len as f64 + phase))
                .collect()
        }
        1 => {
            let slope = amp * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let intercept = amp * (rng.random::<f64>() - 0.5);
            (0..len)
                .map(|t| intercept + slope * (2.0 * t as f64 / len as f64 - 1.0))
                .collect()
        }
        _ => (0..len).map(|_| amp * gaussian(rng)).collect(),
    };
    (
        Series {
            id: format!("demo-classify-{class}"),
            values,
            meta: Default::default(),
        },
        class,
    )
}

/// Generates one forecasting example: `(history series, next-patch values)`.
fn forecast_example<R: Rng>(rng: &mut R, history_patches: usize) -> (Series, Vec<f64>) {
    let total = (history_patches + 1) * PATCH_LEN;
    let cycles = 1.0 + 3.0 * rng.random::<f64>();
    let phase = rng.random::<f64>() * core::f64::consts::TAU;
    let amp = 0.5 + 1.5 * rng.random::<f64>();
    let values: Vec<f64> = (0..total)
        .map(|t| amp * libm::sin(core::f64::consts::TAU * cycles * t as f64 / total as f64 + phase))
        .collect();
    let history = values[..history_patches * PATCH_LEN].to_vec();
    let target = values[history_patches * PATCH_LEN..].to_vec();
    (
        Series {
            id: "demo-forecast".to_string(),
            values: history,
            meta: Default::default(),
        },
        target,
    )
}

/// Number of actions for a task: 3 class labels, or one scale/code head.
pub fn action_count(task: DemoTask) -> usize {
    match task {
        DemoTask::Classify => CLASS_LABELS.len(),
        DemoTask::Forecast => (SCALE_TOKENS + LEVEL_TOKENS) as usize,
    }
}

/// Valid actions for slot `t` of a forecast completion: slot 0 picks a scale
/// token, slots 1..=3 pick a code for the corresponding level.
pub fn forecast_mask(slot: usize) -> Vec<bool> {
    let n = (SCALE_TOKENS + LEVEL_TOKENS) as usize;
    let mut mask = vec![false; n];
    if slot == 0 {
        mask[..SCALE_TOKENS as usize].iter_mut().for_each(|m| *m = true);
    } else {
        mask[SCALE_TOKENS as usize..].iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Embedding id for a forecast action taken at `slot`.
fn forecast_context_token(slot: usize, action: usize) -> usize {
    if slot == 0 {
        action
    } else {
        LEVEL_BASE[slot - 1] as usize + (action - SCALE_TOKENS as usize)
    }
}

/// Renders a 4-action forecast completion as a one-patch token stream.
fn forecast_stream(actions: &[usize]) -> Result<TokenStream> {
    if actions.len() != 4 {
        return Err(CoreError::invalid_config("forecast completions have 4 actions"));
    }
    let scale_exp = actions[0] as i32 + SCALE_EXP_MIN;
    let indices: Vec<usize> = actions[1..]
        .iter()
        .map(|&a| a - SCALE_TOKENS as usize)
        .collect();
    let mut stream = TokenStream::new(PATCH_LEN)?;
    stream.push_patch(scale_exp, &indices)?;
    Ok(stream)
}

/// Runs the RL demo against a trained tokenizer; deterministic under the
/// config seed.
pub fn rl_demo(model: &Tokenizer, config: &DemoConfig) -> Result<DemoReport> {
    config.validate()?;
    if !model.is_trained() {
        return Err(CoreError::UninitializedCodebook);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = VOCAB_SIZE as usize + TEXT_TOKENS;
    let mut policy = ToyPolicy::init(
        vocab,
        config.embed_dim,
        config.hidden,
        config.blocks,
        action_count(config.task),
        config.temperature,
        &mut rng,
    )?;
    let initial = policy.clone();
    let mask_fn = |slot: usize| forecast_mask(slot);
    let masks: Option<&dyn Fn(usize) -> Vec<bool>> = match config.task {
        DemoTask::Classify => None,
        DemoTask::Forecast => Some(&mask_fn),
    };

    let mut logs = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        // One prompt per step; G completions.
        let (prompt, spec) = match config.task {
            DemoTask::Classify => {
                let (series, class) = classify_example(&mut rng, 4 * PATCH_LEN);
                let stream = model.encode(&series)?;
                let prompt: Vec<usize> = stream.tokens.iter().map(|&t| t as usize).collect();
                (prompt, RewardSpec {
                    w_format: 0.0,
                    ..RewardSpec::classification(CLASS_LABELS[class])
                })
            }
            DemoTask::Forecast => {
                let (history, target) = forecast_example(&mut rng, 4);
                let stream = model.encode(&history)?;
                let prompt: Vec<usize> = stream.tokens.iter().map(|&t| t as usize).collect();
                (prompt, RewardSpec {
                    w_format: 0.0,
                    ..RewardSpec::forecasting(target)
                })
            }
        };

        let tokens_per_completion = match config.task {
            DemoTask::Classify => 1,
            DemoTask::Forecast => 4,
        };
        let mut completions = Vec::with_capacity(config.group);
        let mut rewards = Vec::with_capacity(config.group);
        let mut accuracy = 0.0;
        let mut format_rate = 0.0;
        for _ in 0..config.group {
            let mut context = prompt.clone();
            let mut actions = Vec::with_capacity(tokens_per_completion);
            let mut logps = Vec::with_capacity(tokens_per_completion);
            let mut context_tokens = Vec::with_capacity(tokens_per_completion);
            for slot in 0..tokens_per_completion {
                let mask = masks.map(|f| f(slot));
                let (action, logp) = policy.sample(&context, mask.as_deref(), &mut rng)?;
                let ctx_token = match config.task {
                    DemoTask::Classify => VOCAB_SIZE as usize + action,
                    DemoTask::Forecast => forecast_context_token(slot, action),
                };
                actions.push(action);
                logps.push(logp);
                context_tokens.push(ctx_token);
                context.push(ctx_token);
            }
            let answer = match config.task {
                DemoTask::Classify => CLASS_LABELS[actions[0]].to_string(),
                DemoTask::Forecast => forecast_stream(&actions)?.render_text(),
            };
            let text = format!("<think></think><answer>{answer}</answer>");
            let result = score_completion(&spec, &text, Some(model))?;
            let correctness_bound = match config.task {
                DemoTask::Classify => 1.0,
                DemoTask::Forecast => 2.0,
            };
            accuracy += result.correctness / correctness_bound / config.group as f64;
            if result.format_score >= 1.0 {
                format_rate += 1.0 / config.group as f64;
            }
            rewards.push(result.total);
            completions.push(Rollout {
                prompt: prompt.clone(),
                actions,
                old_logps: logps,
                context_tokens,
            });
        }

        let group = RolloutGroup::new(step as u64, completions, rewards, config.variant)?;
        let lr = lr_at(config.lr, config.schedule, step as u64, config.steps as u64);
        let stats = policy_gradient_step(&mut policy, &group, lr, config.clip, masks)?;
        let kl_mask = match config.task {
            DemoTask::Classify => None,
            // Drift on the first decision (scale slot) is representative.
            DemoTask::Forecast => Some(forecast_mask(0)),
        };
        let kl = mean_kl(&policy, &initial, &[prompt], kl_mask.as_deref())?;
        logs.push(DemoStepLog {
            step,
            mean_reward: group.rewards.iter().sum::<f64>() / group.rewards.len() as f64,
            accuracy,
            format_rate,
            kl,
            clip_fraction: stats.clip_fraction,
        });
    }

    let tail = logs.len().min(50);
    let final_accuracy = logs[logs.len() - tail..]
        .iter()
        .map(|l| l.accuracy)
        .sum::<f64>()
        / tail as f64;
    let final_reward = logs[logs.len() - tail..]
        .iter()
        .map(|l| l.mean_reward)
        .sum::<f64>()
        / tail as f64;
    Ok(DemoReport {
        task: config.task,
        variant: config.variant,
        logs,
        final_accuracy,
        final_reward,
    })
}

/// Renders one report row as CSV (`step,mean_reward,accuracy,format_rate,
/// kl,clip_fraction`).
pub fn log_csv(report: &DemoReport) -> String {
    let mut out = String::from("step,mean_reward,accuracy,format_rate,kl,clip_fraction\n");
    for l in &report.logs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.step, l.mean_reward, l.accuracy, l.format_rate, l.kl, l.clip_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;
    use crate::rvq::RvqConfig;
    use crate::tensor::Tensor2D;

    /// A structurally valid tokenizer with k-means-initialized codebooks
    /// (full vocab shape so streams can be rendered).
    fn demo_model() -> Tokenizer {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut model = Tokenizer::with_configs(
            MlpConfig {
                input: PATCH_LEN,
                hidden: 32,
                output: 16,
                blocks: 2,
            },
            MlpConfig {
                input: 16,
                hidden: 32,
                output: PATCH_LEN,
                blocks: 2,
            },
            RvqConfig {
                levels: 3,
                codes: 2048,
                dim: 16,
            },
            &mut rng,
        )
        .unwrap();
        // Random codebooks are enough for the plumbing tests here.
        let sample = Tensor2D::from_fn(64, 16, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        model.rvq.random_init(&sample, &mut rng).unwrap();
        model
    }

    #[test]
    fn moving_average_basics() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[1.0], 2), Vec::<f64>::new());
        assert_eq!(moving_average(&[1.0, 2.0], 0), Vec::<f64>::new());
    }

    #[test]
    fn drawdown_measures_dips() {
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(max_drawdown(&[1.0, 3.0, 2.0, 3.5]), 1.0);
        assert_eq!(max_drawdown(&[]), 0.0);
    }

    #[test]
    fn forecast_masks_partition_actions() {
        let scale_mask = forecast_mask(0);
        let code_mask = forecast_mask(2);
        assert_eq!(scale_mask.iter().filter(|&&m| m).count(), SCALE_TOKENS as usize);
        assert_eq!(code_mask.iter().filter(|&&m| m).count(), LEVEL_TOKENS as usize);
        for (a, b) in scale_mask.iter().zip(code_mask.iter()) {
            assert!(!(a & b), "masks overlap");
        }
    }

    #[test]
    fn forecast_stream_round_trips_actions() {
        let actions = [12usize, 47 + 5, 47 + 0, 47 + 2047];
        let stream = forecast_stream(&actions).unwrap();
        let patches = stream.patches().unwrap();
        assert_eq!(patches.len(), 1);
        let (scale_exp, indices) = patches[0];
        assert_eq!(scale_exp, 12 + SCALE_EXP_MIN);
        assert_eq!(indices, [5, 0, 2047]);
    }

    #[test]
    fn classify_examples_cover_all_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = [false; 3];
        for _ in 0..64 {
            let (series, class) = classify_example(&mut rng, 128);
            assert_eq!(series.values.len(), 128);
            assert!(series.values.iter().all(|v| v.is_finite()));
            seen[class] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn demo_runs_are_deterministic() {
        let model = demo_model();
        let config = DemoConfig {
            steps: 6,
            ..DemoConfig::classify()
        };
        let a = rl_demo(&model, &config).unwrap();
        let b = rl_demo(&model, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.logs.len(), 6);
        for log in &a.logs {
            assert!((0.0..=1.0).contains(&log.accuracy));
            assert!((0.0..=1.0).contains(&log.format_rate));
            assert!(log.kl.is_finite() && log.kl >= -1e-12);
        }
    }

    #[test]
    fn forecast_demo_runs() {
        let model = demo_model();
        let config = DemoConfig {
            steps: 3,
            group: 4,
            ..DemoConfig::forecast()
        };
        let report = rl_demo(&model, &config).unwrap();
        assert_eq!(report.logs.len(), 3);
        for log in &report.logs {
            assert!(log.mean_reward.is_finite());
            assert!((0.0..=1.0).contains(&log.accuracy));
        }
    }

    #[test]
    fn untrained_model_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Tokenizer::with_configs(
            MlpConfig {
                input: PATCH_LEN,
                hidden: 32,
                output: 16,
                blocks: 2,
            },
            MlpConfig {
                input: 16,
                hidden: 32,
                output: PATCH_LEN,
                blocks: 2,
            },
            RvqConfig {
                levels: 3,
                codes: 2048,
                dim: 16,
            },
            &mut rng,
        )
        .unwrap();
        let err = rl_demo(&model, &DemoConfig::classify()).unwrap_err();
        assert!(matches!(err, CoreError::UninitializedCodebook));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let model = demo_model();
        let config = DemoConfig {
            steps: 2,
            ..DemoConfig::classify()
        };
        let report = rl_demo(&model, &config).unwrap();
        let csv = log_csv(&report);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("step,mean_reward"));
    }
}
