//! Proximal policy optimisation for the rudder-command policy.
//!
//! The actor emits one pre-squash unit; the Gaussian mean is
//! `μ = tanh(out)` in normalized action units (1 = full rudder) with a
//! state-independent log-σ stored as the actor's trailing free parameter.
//! Log-probabilities are taken of the pre-clamp draw; clamping to the
//! rudder range is part of the environment.
//!
//! All randomness is per-episode: episode `k` of a run seeded `s` draws from
//! `ChaCha8Rng::seed_from_u64(s + k)`, so collection is reproducible
//! regardless of thread count. Batch gradients are summed over fixed-size
//! chunks in index order for the same reason.

use std::f64::consts::{E, PI};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Policy;
use crate::disturbance::Wind;
use crate::dynamics::ShipModel;
use crate::error::{invalid, Error, Result};
use crate::mdp::{self, EpisodeConfig, Observation, Status};
use crate::neural::{adam_step, AdamState, MlpParams};

/// Rows per gradient chunk. Fixed so the reduction order never depends on
/// the thread pool.
const GRAD_CHUNK: usize = 256;

/// Episode-index offset of the held-out selection set.
pub const SELECTION_SEED_OFFSET: u64 = 1 << 40;
/// Episode-index offset of the final evaluation set.
pub const EVALUATION_SEED_OFFSET: u64 = 1 << 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr0: f64,
    pub decay_steps: f64,
    pub decay_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub episodes_per_iter: usize,
    pub iterations: usize,
    pub value_coef: f64,
    /// Rows per Adam step; `None` means one full-batch step per epoch.
    pub minibatch_size: Option<usize>,
    pub hidden: Vec<usize>,
    /// Initial log-σ in normalized action units.
    pub init_log_std: f64,
    /// Fixed observation multipliers `[d_c, χ_e, d_wp, r']`. The default
    /// feeds the observation unscaled.
    pub input_scale: [f64; 4],
    /// Held-out episodes per candidate in policy selection.
    pub selection_episodes: usize,
    /// Consecutive aborted iterations tolerated before training fails.
    pub max_consecutive_aborts: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            decay_steps: 3000.0,
            decay_rate: 0.5,
            gamma: 0.96,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.2,
            epochs: 10,
            episodes_per_iter: 50,
            iterations: 100,
            value_coef: 0.5,
            minibatch_size: None,
            hidden: vec![128, 128],
            init_log_std: 0.5f64.ln(),
            input_scale: [1.0; 4],
            selection_episodes: 100,
            max_consecutive_aborts: 3,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(unit(self.gamma) && unit(self.lambda)) {
            return Err(invalid("gamma and lambda must lie in (0, 1]"));
        }
        if !(self.clip > 0.0 && self.lr0 > 0.0 && self.decay_steps > 0.0 && self.decay_rate > 0.0) {
            return Err(invalid("clip, lr0, decay_steps and decay_rate must be positive"));
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef > 0.0) {
            return Err(invalid("entropy_coef must be non-negative and value_coef positive"));
        }
        if self.epochs == 0 || self.episodes_per_iter == 0 || self.iterations == 0 || self.selection_episodes == 0 {
            return Err(invalid("epochs, episodes_per_iter, iterations and selection_episodes must be positive"));
        }
        if self.minibatch_size == Some(0) || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("minibatch size and hidden widths must be positive"));
        }
        if !self.input_scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(invalid("input_scale entries must be positive"));
        }
        Ok(())
    }

    fn layer_sizes(&self, outputs: usize) -> Vec<usize> {
        let mut sizes = vec![4];
        sizes.extend(&self.hidden);
        sizes.push(outputs);
        sizes
    }
}

/// `lr0·rate^(step/decay_steps)`, continuous in the Adam step count.
pub fn lr_schedule(step: u64, config: &PpoConfig) -> f64 {
    config.lr0 * config.decay_rate.powf(step as f64 / config.decay_steps)
}

/// Log-density of `a` under `N(μ, σ²)`.
pub fn gaussian_log_prob(a: f64, mu: f64, log_std: f64) -> f64 {
    let z = (a - mu) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

/// Differential entropy of a 1-D Gaussian.
pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 * (2.0 * PI * E).ln() + log_std
}

fn actor_log_std(actor: &MlpParams) -> f64 {
    actor.extras()[0]
}

/// Fresh actor and critic for `config`.
pub fn init_networks<R: Rng + ?Sized>(config: &PpoConfig, rng: &mut R) -> Result<(MlpParams, MlpParams)> {
    let mut actor = MlpParams::orthogonal(&config.layer_sizes(1), 1, 1.0, 0.01, rng)?;
    actor.extras_mut()[0] = config.init_log_std;
    let critic = MlpParams::orthogonal(&config.layer_sizes(1), 0, 1.0, 1.0, rng)?;
    Ok((actor, critic))
}

/// A stochastic action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Commanded rudder (rad) after clamping.
    pub delta_c: f64,
    /// Pre-clamp draw in normalized units.
    pub raw: f64,
    pub log_prob: f64,
    pub mean: f64,
}

/// Draws `a ~ N(μ(obs), σ)` and clamps it to the rudder range.
pub fn sample_action<R: Rng + ?Sized>(policy: &Policy, obs: &Observation, delta_max: f64, rng: &mut R) -> Result<SampledAction> {
    let mean = policy.mean_normalized(obs)?;
    let log_std = actor_log_std(&policy.actor);
    let z: f64 = rng.sample(StandardNormal);
    let raw = mean + log_std.exp() * z;
    Ok(SampledAction {
        delta_c: raw.clamp(-1.0, 1.0) * delta_max,
        raw,
        log_prob: gaussian_log_prob(raw, mean, log_std),
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Scaled network input.
    pub features: [f64; 4],
    /// Pre-clamp action, normalized units.
    pub action: f64,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub start: usize,
    pub len: usize,
    /// Value used after the last step: 0 on success or overshoot, `V(s_T)`
    /// when cut off by the horizon.
    pub bootstrap: f64,
    pub total_return: f64,
    pub shaped_return: f64,
    pub status: Status,
    pub sq_cross_track: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends one episode; `rec.start` and `rec.len` are overwritten.
    pub fn push_episode(&mut self, steps: Vec<StepRecord>, mut rec: EpisodeRecord) {
        rec.start = self.steps.len();
        rec.len = steps.len();
        self.steps.extend(steps);
        self.episodes.push(rec);
    }

    pub fn success_rate(&self) -> f64 {
        rate(&self.episodes, Status::Success)
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.total_return))
    }

    pub fn mean_shaped_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.shaped_return))
    }
}

fn rate(episodes: &[EpisodeRecord], status: Status) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    episodes.iter().filter(|e| e.status == status).count() as f64 / episodes.len() as f64
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// GAE(λ) within each episode. Fills `advantages` and `returns = A + V`.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) -> Result<()> {
    if buffer.is_empty() {
        return Err(invalid("GAE on an empty rollout buffer"));
    }
    let n = buffer.len();
    buffer.advantages = vec![0.0; n];
    buffer.returns = vec![0.0; n];
    for ep in &buffer.episodes {
        let mut next_adv = 0.0;
        let mut next_value = ep.bootstrap;
        for t in (ep.start..ep.start + ep.len).rev() {
            let s = &buffer.steps[t];
            let delta = s.reward + gamma * next_value - s.value;
            next_adv = delta + gamma * lambda * next_adv;
            buffer.advantages[t] = next_adv;
            buffer.returns[t] = next_adv + s.value;
            next_value = s.value;
        }
    }
    Ok(())
}

/// Runs one stochastic episode. `episode` is the global episode index.
pub fn run_episode(
    policy: &Policy,
    critic: &MlpParams,
    model: &ShipModel,
    wind: Option<&Wind>,
    env: &EpisodeConfig,
    seed: u64,
    episode: u64,
) -> Result<(Vec<StepRecord>, EpisodeRecord)> {
    let wrap = |e: Error| Error::Episode { episode, source: Box::new(e) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(episode));
    let (mut state, mut ctx, mut obs) = mdp::reset(env, model, &mut rng);
    let delta_max = model.actuator.delta_max();
    let mut steps = Vec::new();
    let mut rec = EpisodeRecord {
        start: 0,
        len: 0,
        bootstrap: 0.0,
        total_return: 0.0,
        shaped_return: 0.0,
        status: Status::Running,
        sq_cross_track: 0.0,
    };
    loop {
        let features = policy.features(&obs);
        let value = critic.forward(&features).map_err(wrap)?[0];
        let act = sample_action(policy, &obs, delta_max, &mut rng).map_err(wrap)?;
        let t = mdp::env_step(&state, &ctx, act.delta_c, model, wind, env).map_err(wrap)?;
        steps.push(StepRecord {
            features,
            action: act.raw,
            log_prob: act.log_prob,
            reward: t.reward.total,
            value,
            status: t.status,
        });
        rec.total_return += t.reward.total;
        rec.shaped_return += t.reward.shaped();
        rec.sq_cross_track += t.observation.d_c * t.observation.d_c;
        state = t.state;
        ctx = t.ctx;
        obs = t.observation;
        if t.status.is_terminal() {
            rec.status = t.status;
            if t.status == Status::Horizon {
                rec.bootstrap = critic.forward(&policy.features(&obs)).map_err(wrap)?[0];
            }
            break;
        }
    }
    Ok((steps, rec))
}

/// Collects `n` episodes numbered `first_episode..first_episode + n`.
pub fn collect_iteration(
    policy: &Policy,
    critic: &MlpParams,
    model: &ShipModel,
    wind: Option<&Wind>,
    env: &EpisodeConfig,
    seed: u64,
    first_episode: u64,
    n: usize,
) -> Result<RolloutBuffer> {
    let runs: Vec<_> = (0..n as u64)
        .into_par_iter()
        .map(|k| run_episode(policy, critic, model, wind, env, seed, first_episode + k))
        .collect::<Result<_>>()?;
    let mut buffer = RolloutBuffer::default();
    for (steps, rec) in runs {
        buffer.push_episode(steps, rec);
    }
    Ok(buffer)
}

/// Per-row data the loss functions need.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<[f64; 4]>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    /// Batch from a buffer with advantages normalized to zero mean and unit
    /// variance.
    pub fn from_buffer(buffer: &RolloutBuffer) -> Result<Self> {
        if buffer.advantages.len() != buffer.len() || buffer.is_empty() {
            return Err(invalid("advantages must be computed before the update"));
        }
        let n = buffer.len() as f64;
        let m = buffer.advantages.iter().sum::<f64>() / n;
        let var = buffer.advantages.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        Ok(Self {
            features: buffer.steps.iter().map(|s| s.features).collect(),
            actions: buffer.steps.iter().map(|s| s.action).collect(),
            old_log_probs: buffer.steps.iter().map(|s| s.log_prob).collect(),
            advantages: buffer.advantages.iter().map(|a| (a - m) / sd).collect(),
            returns: buffer.returns.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Clipped-surrogate actor loss `−mean(min(ρA, clip(ρ)A)) − c·H` and its
/// gradient over the actor's flat parameters.
pub fn actor_loss_and_grad(actor: &MlpParams, batch: &Batch, clip: f64, entropy_coef: f64) -> Result<(ActorStats, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    let log_std = actor_log_std(actor);
    let sigma2 = (2.0 * log_std).exp();
    let inv_n = 1.0 / n as f64;
    let chunks: Vec<(usize, usize)> = (0..n).step_by(GRAD_CHUNK).map(|s| (s, (s + GRAD_CHUNK).min(n))).collect();
    let parts: Vec<(Vec<f64>, [f64; 4])> = chunks
        .par_iter()
        .map(|&(lo, hi)| -> Result<_> {
            let mut grad = vec![0.0; actor.len()];
            // surrogate sum, clipped count, kl sum, log-σ gradient
            let mut acc = [0.0; 4];
            for i in lo..hi {
                let cache = actor.forward_cached(&batch.features[i])?;
                let out = cache.output()[0];
                let mu = out.tanh();
                let a = batch.actions[i];
                let adv = batch.advantages[i];
                let log_prob = gaussian_log_prob(a, mu, log_std);
                let log_ratio = log_prob - batch.old_log_probs[i];
                let ratio = log_ratio.exp();
                let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
                acc[0] += (ratio * adv).min(clipped * adv);
                acc[2] += (ratio - 1.0) - log_ratio;
                let inactive = (adv >= 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip);
                if inactive {
                    acc[1] += 1.0;
                    continue;
                }
                // ∂loss/∂log π for this row.
                let g = -inv_n * ratio * adv;
                let d_mu = (a - mu) / sigma2;
                actor.backward(&cache, &[g * d_mu * (1.0 - mu * mu)], &mut grad);
                acc[3] += g * ((a - mu) * (a - mu) / sigma2 - 1.0);
            }
            Ok((grad, acc))
        })
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; actor.len()];
    let mut acc = [0.0; 4];
    for (g, a) in parts {
        grad.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
        acc.iter_mut().zip(a).for_each(|(x, y)| *x += y);
    }
    let entropy = gaussian_entropy(log_std);
    let ls = actor.extra_offset();
    grad[ls] += acc[3] - entropy_coef;
    let surrogate = acc[0] * inv_n;
    Ok((
        ActorStats {
            loss: -surrogate - entropy_coef * entropy,
            surrogate,
            entropy,
            clip_fraction: acc[1] * inv_n,
            approx_kl: acc[2] * inv_n,
        },
        grad,
    ))
}

/// `value_coef·mean((V − R)²)` and its gradient.
pub fn critic_loss_and_grad(critic: &MlpParams, batch: &Batch, value_coef: f64) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    let inv_n = 1.0 / n as f64;
    let chunks: Vec<(usize, usize)> = (0..n).step_by(GRAD_CHUNK).map(|s| (s, (s + GRAD_CHUNK).min(n))).collect();
    let parts: Vec<(Vec<f64>, f64)> = chunks
        .par_iter()
        .map(|&(lo, hi)| -> Result<_> {
            let mut grad = vec![0.0; critic.len()];
            let mut sq = 0.0;
            for i in lo..hi {
                let cache = critic.forward_cached(&batch.features[i])?;
                let err = cache.output()[0] - batch.returns[i];
                sq += err * err;
                critic.backward(&cache, &[2.0 * value_coef * inv_n * err], &mut grad);
            }
            Ok((grad, sq))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; critic.len()];
    let mut sq = 0.0;
    for (g, s) in parts {
        grad.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
        sq += s;
    }
    Ok((value_coef * sq * inv_n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor: ActorStats,
    pub critic_loss: f64,
    pub adam_steps: u64,
    pub lr_last: f64,
}

/// Optimizer state carried across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub adam_actor: AdamState,
    pub adam_critic: AdamState,
    /// Adam steps taken so far; drives the learning-rate schedule.
    pub global_step: u64,
}

impl Learner {
    pub fn new(actor: MlpParams, critic: MlpParams) -> Self {
        let adam_actor = AdamState::for_params(&actor);
        let adam_critic = AdamState::for_params(&critic);
        Self { actor, critic, adam_actor, adam_critic, global_step: 0 }
    }
}

/// `epochs` passes over the batch. Minibatches, when configured, are
/// contiguous slices of a per-epoch permutation drawn from `rng`. Statistics
/// are those of the final pass.
pub fn ppo_update<R: Rng + ?Sized>(learner: &mut Learner, batch: &Batch, config: &PpoConfig, rng: &mut R) -> Result<UpdateStats> {
    let n = batch.len();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    let mb = config.minibatch_size.unwrap_or(n).min(n);
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        if mb < n {
            for i in (1..n).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
        }
        for idx in order.chunks(mb) {
            let sub;
            let part = if mb < n {
                sub = batch.select(idx);
                &sub
            } else {
                batch
            };
            let (astats, agrad) = actor_loss_and_grad(&learner.actor, part, config.clip, config.entropy_coef)?;
            let (closs, cgrad) = critic_loss_and_grad(&learner.critic, part, config.value_coef)?;
            let finite = astats.loss.is_finite()
                && closs.is_finite()
                && agrad.iter().chain(&cgrad).all(|g| g.is_finite());
            if !finite {
                return Err(Error::IterationAborted {
                    iteration: 0,
                    reason: format!("non-finite loss or gradient (actor {}, critic {closs})", astats.loss),
                });
            }
            let lr = lr_schedule(learner.global_step, config);
            adam_step(learner.actor.as_mut_slice(), &agrad, &mut learner.adam_actor, lr)?;
            adam_step(learner.critic.as_mut_slice(), &cgrad, &mut learner.adam_critic, lr)?;
            learner.global_step += 1;
            stats = UpdateStats { actor: astats, critic_loss: closs, adam_steps: stats.adam_steps + 1, lr_last: lr };
        }
    }
    Ok(stats)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_return_no_bonus: f64,
    pub success_rate: f64,
    pub overshoot_rate: f64,
    pub mean_episode_len: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub log_std: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub global_step: u64,
    pub aborted: bool,
}

pub const TRAINING_LOG_HEADER: &str = "iteration,mean_return,mean_return_no_bonus,success_rate,overshoot_rate,mean_episode_len,actor_loss,critic_loss,entropy,log_std,approx_kl,clip_fraction,lr,global_step,aborted";

pub fn training_log_csv(rows: &[IterationLog]) -> String {
    let mut out = String::from(TRAINING_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.mean_return,
            r.mean_return_no_bonus,
            r.success_rate,
            r.overshoot_rate,
            r.mean_episode_len,
            r.actor_loss,
            r.critic_loss,
            r.entropy,
            r.log_std,
            r.approx_kl,
            r.clip_fraction,
            r.lr,
            r.global_step,
            r.aborted
        ));
    }
    out
}

/// Training state. Iteration numbers start at 1.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: PpoConfig,
    pub env: EpisodeConfig,
    pub model: ShipModel,
    pub wind: Option<Wind>,
    pub seed: u64,
    pub learner: Learner,
    pub iteration: usize,
    pub episodes_consumed: u64,
    consecutive_aborts: usize,
}

impl Trainer {
    pub fn new(config: PpoConfig, env: EpisodeConfig, model: ShipModel, wind: Option<Wind>, seed: u64) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (actor, critic) = init_networks(&config, &mut rng)?;
        Ok(Self {
            config,
            env,
            model,
            wind,
            seed,
            learner: Learner::new(actor, critic),
            iteration: 0,
            episodes_consumed: 0,
            consecutive_aborts: 0,
        })
    }

    pub fn policy(&self) -> Policy {
        Policy { actor: self.learner.actor.clone(), input_scale: self.config.input_scale }
    }

    /// Collect, estimate advantages, update. A non-finite update restores
    /// the pre-iteration parameters and logs the iteration as aborted;
    /// too many in a row fail training.
    pub fn run_iteration(&mut self) -> Result<IterationLog> {
        self.iteration += 1;
        let policy = self.policy();
        let n = self.config.episodes_per_iter;
        let mut buffer = collect_iteration(
            &policy,
            &self.learner.critic,
            &self.model,
            self.wind.as_ref(),
            &self.env,
            self.seed,
            self.episodes_consumed,
            n,
        )?;
        self.episodes_consumed += n as u64;
        compute_gae(&mut buffer, self.config.gamma, self.config.lambda)?;
        let batch = Batch::from_buffer(&buffer)?;
        // Minibatch shuffles draw from their own per-iteration stream.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0000_0000_0000 ^ self.iteration as u64);
        let before = self.learner.clone();
        let mut log = IterationLog {
            iteration: self.iteration,
            mean_return: buffer.mean_return(),
            mean_return_no_bonus: buffer.mean_shaped_return(),
            success_rate: buffer.success_rate(),
            overshoot_rate: rate(&buffer.episodes, Status::Overshoot),
            mean_episode_len: mean(buffer.episodes.iter().map(|e| e.len as f64)),
            actor_loss: f64::NAN,
            critic_loss: f64::NAN,
            entropy: f64::NAN,
            log_std: f64::NAN,
            approx_kl: f64::NAN,
            clip_fraction: f64::NAN,
            lr: lr_schedule(self.learner.global_step, &self.config),
            global_step: self.learner.global_step,
            aborted: false,
        };
        match ppo_update(&mut self.learner, &batch, &self.config, &mut rng) {
            Ok(stats) => {
                self.consecutive_aborts = 0;
                log.actor_loss = stats.actor.loss;
                log.critic_loss = stats.critic_loss;
                log.entropy = stats.actor.entropy;
                log.approx_kl = stats.actor.approx_kl;
                log.clip_fraction = stats.actor.clip_fraction;
                log.lr = stats.lr_last;
            }
            Err(Error::IterationAborted { reason, .. }) => {
                self.learner = before;
                self.consecutive_aborts += 1;
                log.aborted = true;
                if self.consecutive_aborts >= self.config.max_consecutive_aborts {
                    return Err(Error::TrainingFailed {
                        failures: self.consecutive_aborts,
                        reason: format!("iteration {}: {reason}", self.iteration),
                    });
                }
            }
            Err(e) => return Err(e),
        }
        log.log_std = actor_log_std(&self.learner.actor);
        log.global_step = self.learner.global_step;
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            episodes_consumed: self.episodes_consumed,
            seed: self.seed,
            config: self.config.clone(),
            env: self.env,
            learner: self.learner.clone(),
        }
    }
}

/// Runs `config.iterations` iterations, calling `on_iteration` after each
/// with the log row and the trainer (for checkpointing).
pub fn train<F>(mut trainer: Trainer, mut on_iteration: F) -> Result<(Trainer, Vec<IterationLog>)>
where
    F: FnMut(&IterationLog, &Trainer) -> Result<()>,
{
    let mut logs = Vec::with_capacity(trainer.config.iterations);
    while trainer.iteration < trainer.config.iterations {
        let log = trainer.run_iteration()?;
        on_iteration(&log, &trainer)?;
        logs.push(log);
    }
    Ok((trainer, logs))
}

/// Deterministic (mean-action) evaluation over a fixed seed set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    /// RMS d_c over every step of every episode (ship lengths).
    pub rms_cross_track: f64,
}

pub fn evaluate_policy(
    policy: &Policy,
    model: &ShipModel,
    wind: Option<&Wind>,
    env: &EpisodeConfig,
    seed: u64,
    first_episode: u64,
    n: usize,
) -> Result<EvalSummary> {
    let delta_max = model.actuator.delta_max();
    let results: Vec<(Status, f64, f64, usize)> = (0..n as u64)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(first_episode + k));
            let (mut state, mut ctx, mut obs) = mdp::reset(env, model, &mut rng);
            let (mut ret, mut sq, mut len) = (0.0, 0.0, 0);
            loop {
                let delta_c = policy.mean_action(&obs, delta_max)?;
                let t = mdp::env_step(&state, &ctx, delta_c, model, wind, env)?;
                ret += t.reward.total;
                sq += t.observation.d_c * t.observation.d_c;
                len += 1;
                state = t.state;
                ctx = t.ctx;
                obs = t.observation;
                if t.status.is_terminal() {
                    return Ok((t.status, ret, sq, len));
                }
            }
        })
        .collect::<Result<_>>()?;
    let steps: usize = results.iter().map(|r| r.3).sum();
    Ok(EvalSummary {
        episodes: n,
        success_rate: results.iter().filter(|r| r.0 == Status::Success).count() as f64 / n.max(1) as f64,
        mean_return: mean(results.iter().map(|r| r.1)),
        rms_cross_track: (results.iter().map(|r| r.2).sum::<f64>() / steps.max(1) as f64).sqrt(),
    })
}

/// Highest success rate, then lower RMS cross-track, then earlier
/// iteration. `candidates` pairs an iteration number with its summary.
pub fn select_best(candidates: &[(usize, EvalSummary)]) -> Option<usize> {
    (0..candidates.len()).min_by(|&i, &j| {
        let (ia, a) = &candidates[i];
        let (ib, b) = &candidates[j];
        b.success_rate
            .total_cmp(&a.success_rate)
            .then(a.rms_cross_track.total_cmp(&b.rms_cross_track))
            .then(ia.cmp(ib))
    })
}

/// Evaluates every candidate on the held-out selection set and returns the
/// index of the chosen one with all summaries.
pub fn select_policy(
    candidates: &[(usize, Policy)],
    model: &ShipModel,
    env: &EpisodeConfig,
    seed: u64,
    episodes: usize,
) -> Result<(usize, Vec<(usize, EvalSummary)>)> {
    if candidates.is_empty() {
        return Err(invalid("policy selection needs at least one checkpoint"));
    }
    let summaries = candidates
        .iter()
        .map(|(it, p)| Ok((*it, evaluate_policy(p, model, None, env, seed, SELECTION_SEED_OFFSET, episodes)?)))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&summaries).expect("non-empty");
    Ok((best, summaries))
}

/// Everything needed to resume or evaluate a run.
///
/// Binary layout (little endian): the 8-byte magic `HELMCKPT`, a `u32`
/// format version, a `u64` header length, a UTF-8 JSON header (counters,
/// seed, shapes, Adam timesteps and constants, both configs), then the raw
/// `f64` arrays actor, critic, actor Adam m and v, critic Adam m and v.
/// Randomness needs no extra state: episode `k` always draws from
/// `seed + k`, so `episodes_consumed` is the RNG position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub episodes_consumed: u64,
    pub seed: u64,
    pub config: PpoConfig,
    pub env: EpisodeConfig,
    pub learner: Learner,
}

const MAGIC: &[u8; 8] = b"HELMCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    iteration: usize,
    episodes_consumed: u64,
    global_step: u64,
    seed: u64,
    actor_sizes: Vec<usize>,
    actor_extra: usize,
    critic_sizes: Vec<usize>,
    critic_extra: usize,
    adam_actor_t: u64,
    adam_critic_t: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    ppo: PpoConfig,
    episode: EpisodeConfig,
}

impl Checkpoint {
    pub fn policy(&self) -> Policy {
        Policy { actor: self.learner.actor.clone(), input_scale: self.config.input_scale }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let l = &self.learner;
        let header = CheckpointHeader {
            iteration: self.iteration,
            episodes_consumed: self.episodes_consumed,
            global_step: l.global_step,
            seed: self.seed,
            actor_sizes: l.actor.sizes().to_vec(),
            actor_extra: l.actor.n_extra(),
            critic_sizes: l.critic.sizes().to_vec(),
            critic_extra: l.critic.n_extra(),
            adam_actor_t: l.adam_actor.t,
            adam_critic_t: l.adam_critic.t,
            adam_beta1: l.adam_actor.beta1,
            adam_beta2: l.adam_actor.beta2,
            adam_eps: l.adam_actor.eps,
            ppo: self.config.clone(),
            episode: self.env,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for arr in [
            l.actor.as_slice(),
            l.critic.as_slice(),
            &l.adam_actor.m,
            &l.adam_actor.v,
            &l.adam_critic.m,
            &l.adam_critic.v,
        ] {
            for x in arr {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated checkpoint"))?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated checkpoint"))?;
        let header_len = u64::from_le_bytes(b8) as usize;
        if header_len > 1 << 24 {
            return Err(bad("checkpoint header too large"));
        }
        let mut json = vec![0u8; header_len];
        r.read_exact(&mut json).map_err(|_| bad("truncated checkpoint header"))?;
        let h: CheckpointHeader =
            serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("checkpoint header: {e}")))?;

        let mut read_array = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated checkpoint tensors"))?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let shape = |sizes: &[usize], extra: usize| -> Result<usize> {
            Ok(MlpParams::zeros(sizes, extra).map_err(|e| Error::Checkpoint(e.to_string()))?.len())
        };
        let na = shape(&h.actor_sizes, h.actor_extra)?;
        let nc = shape(&h.critic_sizes, h.critic_extra)?;
        let actor = MlpParams::from_parts(h.actor_sizes, read_array(na)?, h.actor_extra)?;
        let critic = MlpParams::from_parts(h.critic_sizes, read_array(nc)?, h.critic_extra)?;
        let adam = |m, v, t| AdamState { m, v, t, beta1: h.adam_beta1, beta2: h.adam_beta2, eps: h.adam_eps };
        let adam_actor = adam(read_array(na)?, read_array(na)?, h.adam_actor_t);
        let adam_critic = adam(read_array(nc)?, read_array(nc)?, h.adam_critic_t);
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after checkpoint tensors"));
        }
        if !actor.as_slice().iter().chain(critic.as_slice()).all(|x| x.is_finite()) {
            return Err(bad("checkpoint holds non-finite weights"));
        }
        Ok(Self {
            iteration: h.iteration,
            episodes_consumed: h.episodes_consumed,
            seed: h.seed,
            config: h.ppo,
            env: h.episode,
            learner: Learner { actor, critic, adam_actor, adam_critic, global_step: h.global_step },
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}
