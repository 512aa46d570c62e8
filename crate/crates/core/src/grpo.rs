//! Group-relative advantage estimation (GRPO and the DAPO variant) and a
//! clipped-surrogate policy-gradient step for a small categorical sequence
//! policy.
//!
//! The policy embeds the prompt tokens, mean-pools them, and maps the pooled
//! state through a feed-forward trunk to action logits. Multi-token
//! completions re-pool after each generated token, so every emitted token is
//! conditioned on the prompt plus the prefix.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::{Mlp, MlpConfig, MlpGrads};
use crate::tensor::Tensor2D;

/// Epsilon guard in the GRPO standard-deviation normalizer.
pub const ADV_EPS: f64 = 1e-8;
/// PPO-style clipping band half-width.
pub const DEFAULT_CLIP: f64 = 0.2;
/// Completions sampled per prompt.
pub const DEFAULT_GROUP: usize = 8;

/// How group rewards become per-completion advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageVariant {
    /// `(r - mean) / (std + eps)` with the population standard deviation.
    Grpo,
    /// `r - mean`: std and length normalization removed.
    Dapo,
}

/// Population standard deviation.
fn std_dev(rewards: &[f64], mean: f64) -> f64 {
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rewards.len() as f64;
    libm::sqrt(var)
}

/// Group-relative advantages; requires at least two completions.
pub fn advantages(rewards: &[f64], variant: AdvantageVariant) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(CoreError::invalid_config("advantage groups need at least 2 rewards"));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(CoreError::non_finite("group rewards"));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    Ok(match variant {
        AdvantageVariant::Dapo => centered,
        AdvantageVariant::Grpo => {
            let denom = std_dev(rewards, mean) + ADV_EPS;
            centered.into_iter().map(|c| c / denom).collect()
        }
    })
}

/// One sampled completion: the prompt it answered, the chosen actions, and
/// the log-probabilities recorded at sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub prompt: Vec<usize>,
    pub actions: Vec<usize>,
    pub old_logps: Vec<f64>,
    /// Embedding-table id appended to the context after each action. Equals
    /// `actions` unless the action space is remapped per position.
    pub context_tokens: Vec<usize>,
}

impl Rollout {
    /// Rollout whose action ids double as context tokens.
    pub fn new(prompt: Vec<usize>, actions: Vec<usize>, old_logps: Vec<f64>) -> Self {
        let context_tokens = actions.clone();
        Self {
            prompt,
            actions,
            old_logps,
            context_tokens,
        }
    }
}

/// A group of completions for one prompt with their rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: u64,
    pub completions: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Builds a group and computes its advantages with `variant`.
    pub fn new(
        prompt_id: u64,
        completions: Vec<Rollout>,
        rewards: Vec<f64>,
        variant: AdvantageVariant,
    ) -> Result<Self> {
        if completions.len() != rewards.len() {
            return Err(CoreError::ShapeMismatch {
                context: "rollout group".into(),
                expected: format!("{} rewards", completions.len()),
                got: format!("{} rewards", rewards.len()),
            });
        }
        let advantages = advantages(&rewards, variant)?;
        Ok(Self {
            prompt_id,
            completions,
            rewards,
            advantages,
        })
    }
}

/// Small categorical policy: embedding table, feed-forward trunk, softmax
/// head with temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    /// One row per vocabulary entry (tokenizer vocabulary plus text tokens).
    pub embed: Tensor2D,
    /// Maps the pooled state to action logits.
    pub trunk: Mlp,
    pub temperature: f64,
}

impl ToyPolicy {
    pub fn init<R: Rng>(
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        blocks: usize,
        n_actions: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab == 0 || embed_dim == 0 || n_actions < 2 {
            return Err(CoreError::invalid_config(
                "policy needs a vocabulary, an embedding width, and >= 2 actions",
            ));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(CoreError::invalid_config("temperature must be positive"));
        }
        let bound = 1.0 / libm::sqrt(embed_dim as f64);
        let embed = Tensor2D::from_fn(vocab, embed_dim, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound);
        let trunk = Mlp::init(
            MlpConfig {
                input: embed_dim,
                hidden,
                output: n_actions,
                blocks,
            },
            rng,
        )?;
        Ok(Self {
            embed,
            trunk,
            temperature,
        })
    }

    pub fn vocab(&self) -> usize {
        self.embed.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.trunk.config.output
    }

    /// Mean-pooled embedding of a token sequence.
    pub fn state(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(CoreError::EmptyInput);
        }
        let dim = self.embed.cols();
        let mut pooled = vec![0.0; dim];
        for &t in tokens {
            if t >= self.embed.rows() {
                return Err(CoreError::invalid_config("token id outside the embedding table"));
            }
            for (p, &e) in pooled.iter_mut().zip(self.embed.row(t)) {
                *p += e;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        Ok(pooled)
    }

    /// Softmax action distributions for a batch of pooled states, optionally
    /// restricted to `mask` (invalid actions get probability 0).
    pub fn probs_for_states(&self, states: &Tensor2D, mask: Option<&[bool]>) -> Result<Tensor2D> {
        let logits = self.trunk.infer(states)?;
        softmax_rows(&logits, self.temperature, mask)
    }

    /// Action distribution after observing `tokens`.
    pub fn probs(&self, tokens: &[usize], mask: Option<&[bool]>) -> Result<Vec<f64>> {
        let state = self.state(tokens)?;
        let probs = self.probs_for_states(&Tensor2D::from_rows(&[state]), mask)?;
        Ok(probs.row(0).to_vec())
    }

    /// Samples one action; returns `(action, log-probability)`.
    pub fn sample<R: Rng>(
        &self,
        tokens: &[usize],
        mask: Option<&[bool]>,
        rng: &mut R,
    ) -> Result<(usize, f64)> {
        let probs = self.probs(tokens, mask)?;
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                chosen = i;
                break;
            }
        }
        // Guard against picking a masked action through accumulated
        // floating-point slack.
        if probs[chosen] == 0.0 {
            chosen = probs
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.total_cmp(b))
                .map(|(i, _)| i)
                .unwrap_or(0);
        }
        Ok((chosen, libm::log(probs[chosen])))
    }
}

/// Row-wise tempered softmax; masked entries get probability zero.
pub fn softmax_rows(logits: &Tensor2D, temperature: f64, mask: Option<&[bool]>) -> Result<Tensor2D> {
    if let Some(mask) = mask {
        if mask.len() != logits.cols() {
            return Err(CoreError::ShapeMismatch {
                context: "softmax mask".into(),
                expected: format!("{} entries", logits.cols()),
                got: format!("{} entries", mask.len()),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(CoreError::invalid_config("softmax mask excludes every action"));
        }
    }
    let mut out = Tensor2D::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let allowed = |j: usize| mask.map(|m| m[j]).unwrap_or(true);
        let mut max = f64::NEG_INFINITY;
        for (j, &l) in row.iter().enumerate() {
            if allowed(j) && l > max {
                max = l;
            }
        }
        let mut sum = 0.0;
        let out_row = out.row_mut(r);
        for (j, &l) in row.iter().enumerate() {
            if allowed(j) {
                let e = libm::exp((l - max) / temperature);
                out_row[j] = e;
                sum += e;
            }
        }
        if !sum.is_finite() || sum <= 0.0 {
            return Err(CoreError::non_finite("softmax normalizer"));
        }
        out_row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(out)
}

/// Diagnostics from one policy update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// Mean importance ratio over tokens.
    pub mean_ratio: f64,
    /// Fraction of tokens where the clipped branch was active.
    pub clip_fraction: f64,
    /// Value of the clipped surrogate objective.
    pub surrogate: f64,
    /// L2 norm of the full parameter gradient (trunk + embeddings).
    pub grad_norm: f64,
    /// True when the group was skipped (non-finite ratio).
    pub skipped: bool,
    pub diagnostics: String,
}

/// Per-token action masks; `None` allows every action at every position.
pub type MaskFn<'a> = Option<&'a dyn Fn(usize) -> Vec<bool>>;

struct FlatTokens {
    states: Tensor2D,
    actions: Vec<usize>,
    old_logps: Vec<f64>,
    advantages: Vec<f64>,
    /// `(completion, position)` of each flattened token.
    origin: Vec<(usize, usize)>,
}

fn flatten_group(policy: &ToyPolicy, group: &RolloutGroup) -> Result<FlatTokens> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut actions = Vec::new();
    let mut old_logps = Vec::new();
    let mut advantages = Vec::new();
    let mut origin = Vec::new();
    for (c, rollout) in group.completions.iter().enumerate() {
        if rollout.actions.len() != rollout.old_logps.len()
            || rollout.actions.len() != rollout.context_tokens.len()
        {
            return Err(CoreError::ShapeMismatch {
                context: "rollout logps/context".into(),
                expected: format!("{} entries", rollout.actions.len()),
                got: format!(
                    "{} logps, {} context tokens",
                    rollout.old_logps.len(),
                    rollout.context_tokens.len()
                ),
            });
        }
        let mut context = rollout.prompt.clone();
        for (t, &action) in rollout.actions.iter().enumerate() {
            rows.push(policy.state(&context)?);
            actions.push(action);
            old_logps.push(rollout.old_logps[t]);
            advantages.push(group.advantages[c]);
            origin.push((c, t));
            context.push(rollout.context_tokens[t]);
        }
    }
    if rows.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    Ok(FlatTokens {
        states: Tensor2D::from_rows(&rows),
        actions,
        old_logps,
        advantages,
        origin,
    })
}

/// Clipped-surrogate objective and its analytic gradients for one group.
///
/// Returns `(surrogate, trunk grads, embedding grads, stats)`. Gradients are
/// ascent-direction (maximize the surrogate). A non-finite importance ratio
/// marks the group skipped and returns zero gradients.
pub fn surrogate_and_grads(
    policy: &ToyPolicy,
    group: &RolloutGroup,
    clip: f64,
    masks: MaskFn<'_>,
) -> Result<(f64, MlpGrads, Tensor2D, StepStats)> {
    let flat = flatten_group(policy, group)?;
    let n_tok = flat.states.rows();
    let (logits, cache) = policy.trunk.forward(&flat.states)?;
    let n_actions = logits.cols();

    let mut surrogate = 0.0;
    let mut mean_ratio = 0.0;
    let mut clipped_tokens = 0usize;
    let mut grad_logits = Tensor2D::zeros(n_tok, n_actions);
    let inv_n = 1.0 / n_tok as f64;
    for i in 0..n_tok {
        let mask = masks.map(|f| f(flat.origin[i].1));
        let probs_row = softmax_rows(&logits.row_tensor(i), policy.temperature, mask.as_deref())?;
        let probs = probs_row.row(0);
        let action = flat.actions[i];
        if action >= n_actions || probs[action] <= 0.0 {
            return Err(CoreError::invalid_config("rollout action has zero probability"));
        }
        let logp_new = libm::log(probs[action]);
        let ratio = libm::exp(logp_new - flat.old_logps[i]);
        if !ratio.is_finite() {
            let stats = StepStats {
                mean_ratio: f64::NAN,
                clip_fraction: 0.0,
                surrogate: 0.0,
                grad_norm: 0.0,
                skipped: true,
                diagnostics: format!(
                    "non-finite ratio at token {i}: logp_new={logp_new} logp_old={}",
                    flat.old_logps[i]
                ),
            };
            return Ok((0.0, policy.trunk.zero_grads(), Tensor2D::zeros(policy.embed.rows(), policy.embed.cols()), stats));
        }
        mean_ratio += ratio * inv_n;
        let adv = flat.advantages[i];
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let unclipped_term = ratio * adv;
        let clipped_term = clipped * adv;
        // When the clipped branch wins the min, its derivative w.r.t. the
        // ratio is zero (the ratio sits outside the band).
        let (value, coef) = if unclipped_term <= clipped_term {
            (unclipped_term, ratio * adv)
        } else {
            clipped_tokens += 1;
            (clipped_term, 0.0)
        };
        surrogate += value * inv_n;
        // d surrogate / d logit_j = coef * (1[j = a] - p_j) / T / n_tok.
        if coef != 0.0 {
            let g = grad_logits.row_mut(i);
            let scale = coef * inv_n / policy.temperature;
            for (j, &p) in probs.iter().enumerate() {
                let indicator = if j == action { 1.0 } else { 0.0 };
                g[j] = scale * (indicator - p);
            }
        }
    }

    let (trunk_grads, grad_states) = policy.trunk.backward(&cache, &grad_logits)?;
    // Scatter pooled-state gradients back onto the contributing embeddings.
    let mut embed_grads = Tensor2D::zeros(policy.embed.rows(), policy.embed.cols());
    for (i, &(c, t)) in flat.origin.iter().enumerate() {
        let rollout = &group.completions[c];
        let mut context = rollout.prompt.clone();
        for u in 0..t {
            context.push(rollout.context_tokens[u]);
        }
        let inv_len = 1.0 / context.len() as f64;
        for &tok in &context {
            for (gdst, &gsrc) in embed_grads.row_mut(tok).iter_mut().zip(grad_states.row(i)) {
                *gdst += gsrc * inv_len;
            }
        }
    }

    let mut grad_sq = 0.0;
    trunk_grads.visit(&mut |_, g| grad_sq += g.iter().map(|v| v * v).sum::<f64>());
    grad_sq += embed_grads.data().iter().map(|v| v * v).sum::<f64>();
    let stats = StepStats {
        mean_ratio,
        clip_fraction: clipped_tokens as f64 * inv_n,
        surrogate,
        grad_norm: libm::sqrt(grad_sq),
        skipped: false,
        diagnostics: String::new(),
    };
    Ok((surrogate, trunk_grads, embed_grads, stats))
}

/// Clipped-surrogate value only (finite-difference oracle hook).
pub fn surrogate(
    policy: &ToyPolicy,
    group: &RolloutGroup,
    clip: f64,
    masks: MaskFn<'_>,
) -> Result<f64> {
    surrogate_and_grads(policy, group, clip, masks).map(|(s, _, _, _)| s)
}

fn apply_ascent(policy: &mut ToyPolicy, trunk_grads: &MlpGrads, embed_grads: &Tensor2D, lr: f64) {
    let mut flat = Vec::new();
    trunk_grads.visit(&mut |_, g| flat.extend_from_slice(g));
    let mut offset = 0;
    policy.trunk.visit_params_mut(&mut |_, params| {
        let len = params.len();
        for (p, g) in params.iter_mut().zip(&flat[offset..offset + len]) {
            *p += lr * g;
        }
        offset += len;
    });
    for (p, g) in policy.embed.data_mut().iter_mut().zip(embed_grads.data()) {
        *p += lr * g;
    }
}

/// One clipped-surrogate ascent step (single inner epoch). Skipped groups
/// leave the policy untouched.
pub fn policy_gradient_step(
    policy: &mut ToyPolicy,
    group: &RolloutGroup,
    lr: f64,
    clip: f64,
    masks: MaskFn<'_>,
) -> Result<StepStats> {
    let (_, trunk_grads, embed_grads, stats) = surrogate_and_grads(policy, group, clip, masks)?;
    if !stats.skipped {
        apply_ascent(policy, &trunk_grads, &embed_grads, lr);
    }
    Ok(stats)
}

/// Vanilla REINFORCE with the group-mean baseline: ascend
/// `mean(advantage * log pi(action))`. Used to pin down the
/// clip = infinity, single-inner-epoch equivalence.
pub fn reinforce_step(
    policy: &mut ToyPolicy,
    group: &RolloutGroup,
    lr: f64,
    masks: MaskFn<'_>,
) -> Result<StepStats> {
    let flat = flatten_group(policy, group)?;
    let n_tok = flat.states.rows();
    let (logits, cache) = policy.trunk.forward(&flat.states)?;
    let mut grad_logits = Tensor2D::zeros(n_tok, logits.cols());
    let inv_n = 1.0 / n_tok as f64;
    let mut objective = 0.0;
    for i in 0..n_tok {
        let mask = masks.map(|f| f(flat.origin[i].1));
        let probs_row = softmax_rows(&logits.row_tensor(i), policy.temperature, mask.as_deref())?;
        let probs = probs_row.row(0);
        let action = flat.actions[i];
        let adv = flat.advantages[i];
        objective += adv * libm::log(probs[action]) * inv_n;
        let g = grad_logits.row_mut(i);
        let scale = adv * inv_n / policy.temperature;
        for (j, &p) in probs.iter().enumerate() {
            let indicator = if j == action { 1.0 } else { 0.0 };
            g[j] = scale * (indicator - p);
        }
    }
    let (trunk_grads, grad_states) = policy.trunk.backward(&cache, &grad_logits)?;
    let mut embed_grads = Tensor2D::zeros(policy.embed.rows(), policy.embed.cols());
    for (i, &(c, t)) in flat.origin.iter().enumerate() {
        let rollout = &group.completions[c];
        let mut context = rollout.prompt.clone();
        for u in 0..t {
            context.push(rollout.context_tokens[u]);
        }
        let inv_len = 1.0 / context.len() as f64;
        for &tok in &context {
            for (gdst, &gsrc) in embed_grads.row_mut(tok).iter_mut().zip(grad_states.row(i)) {
                *gdst += gsrc * inv_len;
            }
        }
    }
    let mut grad_sq = 0.0;
    trunk_grads.visit(&mut |_, g| grad_sq += g.iter().map(|v| v * v).sum::<f64>());
    grad_sq += embed_grads.data().iter().map(|v| v * v).sum::<f64>();
    apply_ascent(policy, &trunk_grads, &embed_grads, lr);
    Ok(StepStats {
        mean_ratio: 1.0,
        clip_fraction: 0.0,
        surrogate: objective,
        grad_norm: libm::sqrt(grad_sq),
        skipped: false,
        diagnostics: String::new(),
    })
}

/// Mean KL divergence `KL(p || q)` between two policies over a set of
/// contexts (reported as a drift metric; no KL penalty is applied).
pub fn mean_kl(
    p: &ToyPolicy,
    q: &ToyPolicy,
    contexts: &[Vec<usize>],
    mask: Option<&[bool]>,
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let mut total = 0.0;
    for context in contexts {
        let pp = p.probs(context, mask)?;
        let qq = q.probs(context, mask)?;
        let mut kl = 0.0;
        for (&a, &b) in pp.iter().zip(qq.iter()) {
            if a > 0.0 && b > 0.0 {
                kl += a * libm::log(a / b);
            }
        }
        total += kl;
    }
    Ok(total / contexts.len() as f64)
}
