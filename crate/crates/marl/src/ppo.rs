//! Clipped-surrogate PPO loss, its analytic gradient, return targets and
//! the update loop.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{softmax, Mlp, Optimizer, OptimizerKind};
use crate::MarlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Only used by the momentum optimiser.
    pub momentum: f64,
    pub gamma: f64,
    /// `Some(lambda)` switches advantages from return-minus-baseline to GAE.
    pub gae_lambda: Option<f64>,
    pub update_epochs: u32,
    pub minibatches: u32,
    /// Per-network global gradient-norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.02,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            gamma: 0.95,
            gae_lambda: None,
            update_epochs: 4,
            minibatches: 4,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

fn check(ok: bool, field: &str, reason: impl FnOnce() -> String) -> Result<(), MarlError> {
    if ok {
        Ok(())
    } else {
        Err(MarlError::InvalidField { field: field.to_string(), reason: reason() })
    }
}

fn positive(field: &str, value: f64) -> Result<(), MarlError> {
    check(value.is_finite() && value > 0.0, field, || format!("must be positive, got {value}"))
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        positive("ppo.clip", self.clip)?;
        positive("ppo.value_coef", self.value_coef)?;
        check(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0, "ppo.entropy_coef", || {
            format!("must be non-negative, got {}", self.entropy_coef)
        })?;
        positive("ppo.learning_rate", self.learning_rate)?;
        check((0.0..1.0).contains(&self.momentum), "ppo.momentum", || {
            format!("must lie in [0, 1), got {}", self.momentum)
        })?;
        check(self.gamma > 0.0 && self.gamma <= 1.0, "ppo.gamma", || format!("must lie in (0, 1], got {}", self.gamma))?;
        if let Some(l) = self.gae_lambda {
            check((0.0..=1.0).contains(&l), "ppo.gae_lambda", || format!("must lie in [0, 1], got {l}"))?;
        }
        check(self.update_epochs > 0, "ppo.update_epochs", || "must be at least 1".into())?;
        check(self.minibatches > 0, "ppo.minibatches", || "must be at least 1".into())?;
        check(self.max_grad_norm.is_finite() && self.max_grad_norm >= 0.0, "ppo.max_grad_norm", || {
            format!("must be non-negative, got {}", self.max_grad_norm)
        })
    }
}

/// `G_t = sum_k gamma^k r_{t+k}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    bootstrapped_returns(rewards, gamma, 0.0)
}

/// Returns of a truncated episode whose value after the last reward is
/// `tail`.
pub fn bootstrapped_returns(rewards: &[f64], gamma: f64, tail: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = tail;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalised advantage estimates; `tail` is the value after the last
/// reward (0 for a terminated episode).
pub fn gae(rewards: &[f64], values: &[f64], tail: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let next = values.get(t + 1).copied().unwrap_or(tail);
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// Running mean and variance of value targets (parallel Welford merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNormalizer {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for ValueNormalizer {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0, count: 0.0 }
    }
}

impl ValueNormalizer {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        if self.count == 0.0 {
            self.mean = mean;
            self.var = var;
            self.count = n;
            return;
        }
        let total = self.count + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.var = (self.var * self.count + var * n + delta * delta * self.count * n / total) / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-6)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std() + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBatch {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl PolicyBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_logp: idx.iter().map(|&i| self.old_logp[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
        }
    }
}

/// Critic regression batch; `targets` are in the critic's output space.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBatch {
    pub states: Array2<f64>,
    pub targets: Vec<f64>,
}

impl ValueBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { states: self.states.select(Axis(0), idx), targets: idx.iter().map(|&i| self.targets[i]).collect() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// `-mean(min(r A, clip(r) A))`.
    pub policy: f64,
    /// `mean((V - target)^2)`.
    pub value: f64,
    pub entropy: f64,
    /// `policy + value_coef * value - entropy_coef * entropy`.
    pub total: f64,
    pub clip_fraction: f64,
}

/// Loss and analytic gradients w.r.t. the policy and critic parameters.
/// Either batch may be empty, in which case its terms vanish.
pub fn ppo_loss(
    policy: &Mlp,
    critic: &Mlp,
    pb: &PolicyBatch,
    vb: &ValueBatch,
    cfg: &PpoConfig,
) -> (LossParts, Mlp, Mlp) {
    let mut parts = LossParts::default();
    let mut policy_grad = policy.zeros_like();
    let mut critic_grad = critic.zeros_like();

    if !pb.is_empty() {
        let n = pb.len() as f64;
        let (logits, tape) = policy.forward_tape(pb.obs.view());
        let probs = softmax(&logits);
        let mut grad = Array2::zeros(logits.raw_dim());
        let mut clipped = 0usize;
        for (i, p) in probs.rows().into_iter().enumerate() {
            let a = pb.actions[i];
            let logp = p[a].ln();
            let ratio = (logp - pb.old_logp[i]).exp();
            let adv = pb.advantages[i];
            let unclipped = ratio * adv;
            let bounded = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
            parts.policy -= unclipped.min(bounded) / n;
            if (ratio - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
            let d_logp = if unclipped <= bounded { -unclipped / n } else { 0.0 };
            let h: f64 = -p.iter().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>();
            parts.entropy += h / n;
            for k in 0..p.len() {
                let indicator = if k == a { 1.0 } else { 0.0 };
                let log_pk = if p[k] > 0.0 { p[k].ln() } else { 0.0 };
                let d_entropy = -p[k] * (log_pk + h);
                grad[[i, k]] = d_logp * (indicator - p[k]) - cfg.entropy_coef * d_entropy / n;
            }
        }
        parts.clip_fraction = clipped as f64 / n;
        policy_grad = policy.backward(&tape, grad);
    }

    if !vb.is_empty() {
        let m = vb.len() as f64;
        let (values, tape) = critic.forward_tape(vb.states.view());
        let mut grad = Array2::zeros(values.raw_dim());
        for (i, t) in vb.targets.iter().enumerate() {
            let err = values[[i, 0]] - t;
            parts.value += err * err / m;
            grad[[i, 0]] = cfg.value_coef * 2.0 * err / m;
        }
        critic_grad = critic.backward(&tape, grad);
    }

    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
    (parts, policy_grad, critic_grad)
}

fn clip_norm(grad: &mut Mlp, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = grad.sq_norm().sqrt();
        if norm > max_norm {
            grad.scale(max_norm / norm);
        }
    }
}

/// Policies, shared critic and their optimisers. With parameter sharing a
/// single policy serves every agent.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policies: Vec<Mlp>,
    pub critic: Mlp,
    pub value_norm: ValueNormalizer,
    policy_opts: Vec<Optimizer>,
    critic_opt: Optimizer,
    pub cfg: PpoConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossParts,
    pub steps: u32,
}

impl Learner {
    pub fn new(policies: Vec<Mlp>, critic: Mlp, cfg: PpoConfig) -> Self {
        let opt = |net: &Mlp| Optimizer::new(cfg.optimizer, net, cfg.learning_rate, cfg.momentum);
        let policy_opts = policies.iter().map(opt).collect();
        let critic_opt = opt(&critic);
        Self { policies, critic, value_norm: ValueNormalizer::default(), policy_opts, critic_opt, cfg }
    }

    /// Runs `update_epochs` passes of shuffled minibatches. `owners[i]` is
    /// the policy index of decision `i`; `raw_returns` are unnormalised
    /// value targets. An empty batch leaves every parameter untouched.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        pb: &PolicyBatch,
        owners: &[usize],
        states: &Array2<f64>,
        raw_returns: &[f64],
        rng: &mut R,
    ) -> UpdateStats {
        let mut stats = UpdateStats::default();
        if pb.is_empty() && raw_returns.is_empty() {
            return stats;
        }
        self.value_norm.update(raw_returns);
        let vb = ValueBatch {
            states: states.clone(),
            targets: raw_returns.iter().map(|&g| self.value_norm.normalize(g)).collect(),
        };
        let mut pb = pb.clone();
        if self.cfg.normalize_advantages && pb.len() > 1 {
            let n = pb.len() as f64;
            let mean = pb.advantages.iter().sum::<f64>() / n;
            let std = (pb.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
            pb.advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
        }
        let k = self.cfg.minibatches.max(1) as usize;
        let mut p_idx: Vec<usize> = (0..pb.len()).collect();
        let mut v_idx: Vec<usize> = (0..vb.len()).collect();
        let mut sum = LossParts::default();
        for _ in 0..self.cfg.update_epochs {
            p_idx.shuffle(rng);
            v_idx.shuffle(rng);
            for j in 0..k {
                let ps = &p_idx[j * p_idx.len() / k..(j + 1) * p_idx.len() / k];
                let vs = &v_idx[j * v_idx.len() / k..(j + 1) * v_idx.len() / k];
                let vmb = vb.select(vs);
                let empty_v = ValueBatch { states: Array2::zeros((0, vb.states.ncols())), targets: Vec::new() };
                if self.policies.len() == 1 {
                    let pmb = pb.select(ps);
                    let (parts, mut gp, mut gc) = ppo_loss(&self.policies[0], &self.critic, &pmb, &vmb, &self.cfg);
                    clip_norm(&mut gp, self.cfg.max_grad_norm);
                    clip_norm(&mut gc, self.cfg.max_grad_norm);
                    self.policy_opts[0].step(&mut self.policies[0], &gp);
                    self.critic_opt.step(&mut self.critic, &gc);
                    accumulate(&mut sum, &parts);
                } else {
                    let empty_p = pb.select(&[]);
                    let (parts, _, mut gc) = ppo_loss(&self.policies[0], &self.critic, &empty_p, &vmb, &self.cfg);
                    clip_norm(&mut gc, self.cfg.max_grad_norm);
                    self.critic_opt.step(&mut self.critic, &gc);
                    let mut step_parts = parts;
                    for (agent, (policy, opt)) in self.policies.iter_mut().zip(&mut self.policy_opts).enumerate() {
                        let mine: Vec<usize> = ps.iter().copied().filter(|&i| owners[i] == agent).collect();
                        if mine.is_empty() {
                            continue;
                        }
                        let pmb = pb.select(&mine);
                        let (parts, mut gp, _) = ppo_loss(policy, &self.critic, &pmb, &empty_v, &self.cfg);
                        clip_norm(&mut gp, self.cfg.max_grad_norm);
                        opt.step(policy, &gp);
                        let w = mine.len() as f64 / ps.len().max(1) as f64;
                        step_parts.policy += w * parts.policy;
                        step_parts.entropy += w * parts.entropy;
                        step_parts.clip_fraction += w * parts.clip_fraction;
                    }
                    step_parts.total = step_parts.policy + self.cfg.value_coef * step_parts.value
                        - self.cfg.entropy_coef * step_parts.entropy;
                    accumulate(&mut sum, &step_parts);
                }
                stats.steps += 1;
            }
        }
        let s = f64::from(stats.steps.max(1));
        stats.loss = LossParts {
            policy: sum.policy / s,
            value: sum.value / s,
            entropy: sum.entropy / s,
            total: sum.total / s,
            clip_fraction: sum.clip_fraction / s,
        };
        stats
    }

    pub fn is_finite(&self) -> bool {
        self.critic.is_finite() && self.policies.iter().all(Mlp::is_finite)
    }
}

fn accumulate(sum: &mut LossParts, p: &LossParts) {
    sum.policy += p.policy;
    sum.value += p.value;
    sum.entropy += p.entropy;
    sum.total += p.total;
    sum.clip_fraction += p.clip_fraction;
}
