//! Proximal policy optimization with a clipped surrogate objective, GAE(λ)
//! advantages and continual training across a sequence of windows.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, TradingEnv};
use crate::error::{Error, Result};
use crate::lob::BookSnapshot;
use crate::policy::{
    self, backward, clip_grad_norm, forward_with, log_prob_entropy, optimizer_step, sample_action,
    Activations, OptimizerState, PolicyParams, ACTIONS,
};

const ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub steps_per_update: usize,
    pub minibatch_size: usize,
    pub opt_epochs_per_update: usize,
    /// Passes over each window, each with fresh rollouts.
    pub env_epochs: usize,
    /// Global L2 gradient-norm cap; non-positive disables clipping.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            steps_per_update: 1024,
            minibatch_size: 256,
            opt_epochs_per_update: 4,
            env_epochs: 30,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0) || !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return bad("learning_rate, entropy_coef and value_coef must be non-negative");
        }
        if self.steps_per_update == 0
            || self.minibatch_size == 0
            || self.opt_epochs_per_update == 0
            || self.env_epochs == 0
        {
            return bad("batch sizes and epoch counts must be positive");
        }
        Ok(())
    }
}

/// Raw GAE(λ) advantages and return targets for one trajectory segment.
/// `bootstrap_value` is V of the state after the last step (0 if terminal).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::Usage("cannot compute advantages of an empty buffer".into()));
    }
    if rewards.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: rewards.len(),
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean, unit (population) variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    for a in adv.iter_mut() {
        *a = (*a - mean) / (sd + ADV_EPS);
    }
}

/// Per-sample clipped surrogate `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    /// Row-major, `len × obs_dim`.
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize) -> Self {
        RolloutBuffer {
            obs_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn push(&mut self, obs: &[f64], action: usize, log_prob: f64, reward: f64, value: f64) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.observations.extend_from_slice(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
    }

    /// Fills advantages (normalized) and returns (raw) from the collected rewards.
    pub fn finish(&mut self, bootstrap_value: f64, gamma: f64, lambda: f64) -> Result<()> {
        let (mut adv, ret) = compute_gae(&self.rewards, &self.values, bootstrap_value, gamma, lambda)?;
        normalize_advantages(&mut adv);
        if adv.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("non-finite advantage".into()));
        }
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    /// Mean clipped surrogate (before negation).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Composite PPO loss over `indices` of `buf`; when `grad` is given, its
/// exact gradient is accumulated into it.
fn loss_impl(
    params: &PolicyParams,
    buf: &RolloutBuffer,
    indices: &[usize],
    cfg: &PpoConfig,
    act: &mut Activations,
    mut grad: Option<&mut [f64]>,
) -> Result<LossStats> {
    if indices.is_empty() {
        return Err(Error::Usage("empty minibatch".into()));
    }
    let n = indices.len() as f64;
    let eps = cfg.clip_epsilon;
    let mut st = LossStats::default();
    let mut clipped = 0usize;
    for &i in indices {
        let obs = buf.observation(i);
        let out = forward_with(params, obs, act)?;
        let a = buf.actions[i];
        let adv = buf.advantages[i];
        let ret = buf.returns[i];
        let logp = policy::log_softmax(&out.logits);
        let (lp, entropy) = log_prob_entropy(&out.logits, a);
        let log_ratio = lp - buf.log_probs[i];
        let ratio = libm::exp(log_ratio);
        if !ratio.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite probability ratio at sample {i} (log ratio {log_ratio})"
            )));
        }
        let unclipped = ratio * adv;
        let surrogate = clipped_surrogate(ratio, adv, eps);
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        let err = out.value - ret;
        st.surrogate += surrogate / n;
        st.value_loss += err * err / n;
        st.entropy += entropy / n;
        st.approx_kl += ((ratio - 1.0) - log_ratio) / n;

        if let Some(g) = grad.as_deref_mut() {
            let p = logp.map(libm::exp);
            // d(-surrogate)/d(log π(a)) is -r·A when the unclipped branch is the minimum.
            let dlp = if unclipped <= surrogate { -ratio * adv / n } else { 0.0 };
            let mut dlogits = [0.0; ACTIONS];
            for k in 0..ACTIONS {
                let onehot = if k == a { 1.0 } else { 0.0 };
                dlogits[k] = dlp * (onehot - p[k])
                    + cfg.entropy_coef * p[k] * (logp[k] + entropy) / n;
            }
            let dvalue = 2.0 * cfg.value_coef * err / n;
            backward(params, obs, act, &dlogits, dvalue, g);
        }
    }
    st.clip_fraction = clipped as f64 / n;
    st.loss = -st.surrogate + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
    for (name, v) in [
        ("surrogate", st.surrogate),
        ("value", st.value_loss),
        ("entropy", st.entropy),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite {name} loss term")));
        }
    }
    Ok(st)
}

pub fn ppo_loss(params: &PolicyParams, buf: &RolloutBuffer, indices: &[usize], cfg: &PpoConfig) -> Result<LossStats> {
    loss_impl(params, buf, indices, cfg, &mut Activations::default(), None)
}

/// Loss plus its gradient (added into `grad`, which must be zeroed by the caller).
pub fn ppo_loss_grad(
    params: &PolicyParams,
    buf: &RolloutBuffer,
    indices: &[usize],
    cfg: &PpoConfig,
    grad: &mut [f64],
) -> Result<LossStats> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    loss_impl(params, buf, indices, cfg, &mut Activations::default(), Some(grad))
}

/// One JSON-lines record per optimization update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub window_id: String,
    pub epoch: usize,
    pub update: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    /// Number of minibatch steps whose gradient norm was clipped.
    pub grad_clipped: usize,
}

/// Totals of one full pass (episode) over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub window_id: String,
    pub epoch: usize,
    pub episode_reward: i64,
    pub trades: usize,
    pub stopped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub updates: Vec<UpdateRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// A window ready for training: an id for the logs and its snapshots.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSource<'a> {
    pub id: &'a str,
    pub snapshots: &'a [BookSnapshot],
}

/// A training episode ends at the last tick or once a stop-loss has
/// disabled trading, since no later action can change the reward.
fn finished(env: &TradingEnv<'_>) -> bool {
    env.is_done() || env.trading_disabled()
}

/// Owns the evolving policy, its optimizer state and the run's generator.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: PolicyParams,
    pub opt: OptimizerState,
    pub config: PpoConfig,
    rng: ChaCha8Rng,
    act: Activations,
    grad: Vec<f64>,
}

impl Trainer {
    pub fn new(params: PolicyParams, config: PpoConfig, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let opt = OptimizerState::for_params(&params);
        let grad = vec![0.0; params.len()];
        Ok(Trainer {
            params,
            opt,
            config,
            rng,
            act: Activations::default(),
            grad,
        })
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    /// `env_epochs` passes over the window, updating after every
    /// `steps_per_update` transitions and at the end of each pass.
    pub fn train_on_window(&mut self, source: EpisodeSource<'_>, env_cfg: EnvConfig, log: &mut TrainingLog) -> Result<()> {
        let cfg = self.config;
        if source.snapshots.len() < cfg.steps_per_update.max(2) {
            return Err(Error::InvalidConfig(format!(
                "window {} has {} ticks, fewer than steps_per_update = {}",
                source.id,
                source.snapshots.len(),
                cfg.steps_per_update
            )));
        }
        let dim = env_cfg.observation_dim();
        if dim != self.params.shape.input {
            return Err(Error::DimensionMismatch {
                expected: self.params.shape.input,
                got: dim,
            });
        }
        let mut env = TradingEnv::new(source.snapshots, env_cfg)?;
        let mut buf = RolloutBuffer::new(dim);
        let mut next_obs = vec![0.0; dim];

        for epoch in 0..cfg.env_epochs {
            env.reset();
            let mut episode_reward = 0i64;
            let mut trades = 0usize;
            let mut update = 0usize;
            loop {
                buf.clear();
                while buf.len() < cfg.steps_per_update && !finished(&env) {
                    let start = buf.observations.len();
                    buf.observations.resize(start + dim, 0.0);
                    env.observe_into(&mut buf.observations[start..]);
                    let out = forward_with(&self.params, &buf.observations[start..], &mut self.act)?;
                    let a = sample_action(&out.logits, &mut self.rng);
                    let (lp, _) = log_prob_entropy(&out.logits, a);
                    let step = env.step(Action::from_index(a).expect("sampled action in range"))?;
                    episode_reward += step.reward;
                    trades += usize::from(step.trade.is_some());
                    buf.actions.push(a);
                    buf.log_probs.push(lp);
                    buf.rewards.push(step.reward as f64);
                    buf.values.push(out.value);
                }
                let bootstrap = if finished(&env) {
                    0.0
                } else {
                    env.observe_into(&mut next_obs);
                    forward_with(&self.params, &next_obs, &mut self.act)?.value
                };
                buf.finish(bootstrap, cfg.gamma, cfg.gae_lambda)?;
                let record = self.update(&buf, source.id, epoch, update)?;
                log.updates.push(record);
                update += 1;
                if finished(&env) {
                    break;
                }
            }
            log.epochs.push(EpochRecord {
                window_id: source.id.into(),
                epoch,
                episode_reward,
                trades,
                stopped: env.trading_disabled(),
            });
        }
        Ok(())
    }

    fn update(&mut self, buf: &RolloutBuffer, window_id: &str, epoch: usize, update: usize) -> Result<UpdateRecord> {
        let cfg = self.config;
        let mut indices: Vec<usize> = (0..buf.len()).collect();
        let mut sum = LossStats::default();
        let mut steps = 0usize;
        let mut grad_norm = 0.0;
        let mut grad_clipped = 0usize;
        for _ in 0..cfg.opt_epochs_per_update {
            indices.shuffle(&mut self.rng);
            for chunk in indices.chunks(cfg.minibatch_size) {
                self.grad.iter_mut().for_each(|g| *g = 0.0);
                let st = loss_impl(&self.params, buf, chunk, &cfg, &mut self.act, Some(&mut self.grad))?;
                if cfg.max_grad_norm > 0.0 {
                    let norm = clip_grad_norm(&mut self.grad, cfg.max_grad_norm);
                    grad_clipped += usize::from(norm > cfg.max_grad_norm);
                    grad_norm += norm;
                } else {
                    grad_norm += libm::sqrt(self.grad.iter().map(|g| g * g).sum::<f64>());
                }
                optimizer_step(&mut self.params.data, &mut self.opt, &self.grad, cfg.learning_rate)?;
                sum.surrogate += st.surrogate;
                sum.value_loss += st.value_loss;
                sum.entropy += st.entropy;
                sum.clip_fraction += st.clip_fraction;
                sum.approx_kl += st.approx_kl;
                steps += 1;
            }
        }
        let k = steps as f64;
        Ok(UpdateRecord {
            window_id: window_id.into(),
            epoch,
            update,
            steps: buf.len(),
            mean_reward: buf.rewards.iter().sum::<f64>() / buf.len() as f64,
            policy_loss: -sum.surrogate / k,
            value_loss: sum.value_loss / k,
            entropy: sum.entropy / k,
            clip_fraction: sum.clip_fraction / k,
            approx_kl: sum.approx_kl / k,
            grad_norm: grad_norm / k,
            grad_clipped,
        })
    }
}

/// Trains on one window with a fresh optimizer.
pub fn train_on_window(
    params: PolicyParams,
    source: EpisodeSource<'_>,
    env_cfg: EnvConfig,
    config: PpoConfig,
    rng: ChaCha8Rng,
) -> Result<(PolicyParams, TrainingLog)> {
    let mut trainer = Trainer::new(params, config, rng)?;
    let mut log = TrainingLog::default();
    trainer.train_on_window(source, env_cfg, &mut log)?;
    Ok((trainer.into_params(), log))
}

/// Trains through `windows` in order, carrying parameters and optimizer
/// state forward. `on_checkpoint(i, params)` runs after window `i`.
pub fn train_continual<F>(
    params: PolicyParams,
    windows: &[EpisodeSource<'_>],
    env_cfg: EnvConfig,
    config: PpoConfig,
    seed: u64,
    mut on_checkpoint: F,
) -> Result<(PolicyParams, TrainingLog)>
where
    F: FnMut(usize, &PolicyParams),
{
    if windows.is_empty() {
        return Err(Error::Usage("no training windows".into()));
    }
    let mut trainer = Trainer::new(params, config, ChaCha8Rng::seed_from_u64(seed))?;
    let mut log = TrainingLog::default();
    for (i, w) in windows.iter().enumerate() {
        trainer.train_on_window(*w, env_cfg, &mut log)?;
        on_checkpoint(i, &trainer.params);
    }
    Ok((trainer.into_params(), log))
}
