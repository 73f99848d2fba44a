//! Rollouts, MAPPO training loop, evaluation of mechanisms and checkpoints.

use std::collections::BTreeMap;

use iov_bazaar_core::auction::Clearing;
use iov_bazaar_core::market::VehicleId;
use iov_bazaar_core::world::WorldConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{observation_dim, state_dim, MarketEnv, Mechanism};
use crate::nn::{softmax, Mlp};
use crate::ppo::{bootstrapped_returns, gae, Learner, PolicyBatch, PpoConfig, UpdateStats, ValueNormalizer};
use crate::MarlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub world: WorldConfig,
    pub ppo: PpoConfig,
    pub hidden: Vec<usize>,
    pub episode_slots: u32,
    pub episodes_per_epoch: u32,
    pub epochs: u32,
    /// One policy for all buyers instead of one per vehicle.
    pub parameter_sharing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            ppo: PpoConfig::default(),
            hidden: vec![64, 64],
            episode_slots: 100,
            episodes_per_epoch: 8,
            epochs: 500,
            parameter_sharing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        self.world.validate()?;
        self.ppo.validate()?;
        let field = |field: &str, reason: &str| MarlError::InvalidField { field: field.into(), reason: reason.into() };
        if self.hidden.contains(&0) {
            return Err(field("hidden", "layer widths must be positive"));
        }
        if self.episode_slots == 0 {
            return Err(field("episode_slots", "must be at least 1"));
        }
        if self.episodes_per_epoch == 0 {
            return Err(field("episodes_per_epoch", "must be at least 1"));
        }
        Ok(())
    }
}

/// Policy and critic parameters, read-only during rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Agents {
    pub policies: Vec<Mlp>,
    pub critic: Mlp,
    pub value_norm: ValueNormalizer,
}

impl Agents {
    pub fn init<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Self {
        let rsus = cfg.world.population.rsus;
        let sizes = |input: usize, output: usize| -> Vec<usize> {
            std::iter::once(input).chain(cfg.hidden.iter().copied()).chain([output]).collect()
        };
        let count = if cfg.parameter_sharing { 1 } else { cfg.world.population.vehicles.max(1) as usize };
        let policies = (0..count).map(|_| Mlp::init(&sizes(observation_dim(rsus), 2), 0.01, rng)).collect();
        let critic = Mlp::init(&sizes(state_dim(rsus), 1), 1.0, rng);
        Self { policies, critic, value_norm: ValueNormalizer::default() }
    }

    pub fn owner(&self, vehicle: VehicleId) -> usize {
        if self.policies.len() == 1 {
            0
        } else {
            vehicle.index() % self.policies.len()
        }
    }

    /// Action distributions for a batch of observations owned by one policy.
    pub fn action_probs(&self, owner: usize, obs: &Array2<f64>) -> Result<Array2<f64>, MarlError> {
        let policy = &self.policies[owner];
        policy.check_input(&obs.view())?;
        Ok(softmax(&policy.forward(obs.view())))
    }

    pub fn value(&self, state: &[f64]) -> Result<f64, MarlError> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row vector");
        self.critic.check_input(&x.view())?;
        Ok(self.value_norm.denormalize(self.critic.forward(x.view())[[0, 0]]))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Decision {
    owner: usize,
    obs: Vec<f64>,
    action: usize,
    logp: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct SlotRecord {
    state: Vec<f64>,
    reward: f64,
    value: f64,
    decisions: Vec<Decision>,
}

/// Per-slot means of one evaluated or trained episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub reward: f64,
    pub social_welfare: f64,
    pub budget: f64,
    pub latency: f64,
    pub entropy: f64,
    /// Smallest per-RSU mundane budget over all slots.
    pub min_mundane_budget: f64,
    /// Largest |mundane budget| among uniform-price clearings.
    pub max_uniform_budget: f64,
    pub mundane_buyers: usize,
    pub urgent_buyers: usize,
}

struct Episode {
    records: Vec<SlotRecord>,
    /// Critic value of the state after the last slot.
    tail: f64,
    metrics: EpisodeMetrics,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

/// How buyers pick their submarket during a rollout.
#[derive(Clone, Copy)]
pub enum Actor<'a> {
    Learned { agents: &'a Agents, greedy: bool },
    Fixed(Mechanism),
}

fn run_episode(
    actor: Actor<'_>,
    world: &WorldConfig,
    slots: u32,
    world_seed: u64,
    action_seed: u64,
) -> Result<Episode, MarlError> {
    let mut env = MarketEnv::new(world.clone(), world_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let mut records = Vec::with_capacity(slots as usize);
    let mut m = EpisodeMetrics { min_mundane_budget: f64::INFINITY, ..Default::default() };
    let mut decisions_total = 0usize;
    for _ in 0..slots {
        let buyers = env.begin()?;
        let mut decisions = Vec::with_capacity(buyers.len());
        let mut actions = Vec::with_capacity(buyers.len());
        let (state, value) = match actor {
            Actor::Learned { agents, .. } => {
                let state = env.global_state();
                let value = agents.value(&state)?;
                (state, value)
            }
            Actor::Fixed(_) => (Vec::new(), 0.0),
        };
        match actor {
            Actor::Learned { agents, greedy } => {
                let mut by_owner: BTreeMap<usize, Vec<VehicleId>> = BTreeMap::new();
                for &b in &buyers {
                    by_owner.entry(agents.owner(b)).or_default().push(b);
                }
                for (owner, group) in by_owner {
                    let obs: Vec<Vec<f64>> = group.iter().map(|&b| env.observe(b)).collect();
                    let dim = obs[0].len();
                    let flat = Array2::from_shape_vec((obs.len(), dim), obs.concat()).expect("rectangular");
                    let probs = agents.action_probs(owner, &flat)?;
                    for ((&b, o), p) in group.iter().zip(obs).zip(probs.rows()) {
                        let action = if greedy {
                            usize::from(p[1] > p[0])
                        } else {
                            usize::from(rng.random::<f64>() >= p[0])
                        };
                        m.entropy += entropy(p.as_slice().expect("contiguous row"));
                        decisions_total += 1;
                        actions.push((b, action));
                        decisions.push(Decision { owner, obs: o, action, logp: p[action].ln() });
                    }
                }
            }
            Actor::Fixed(kind) => {
                for &b in &buyers {
                    let action = match kind {
                        Mechanism::SecondPrice => 0,
                        Mechanism::DoubleAuction => 1,
                        Mechanism::Random | Mechanism::Madrl => usize::from(rng.random::<bool>()),
                    };
                    actions.push((b, action));
                }
            }
        }
        let report = env.step(&actions)?;
        m.reward += report.reward;
        m.social_welfare += report.social_welfare;
        m.budget += report.budget;
        m.latency += report.latency;
        m.mundane_buyers += report.mundane_buyers;
        m.urgent_buyers += report.urgent_buyers;
        for (b, clearing) in report.outcome.mundane_budgets.iter().zip(&report.outcome.clearings) {
            if clearing.is_some() {
                m.min_mundane_budget = m.min_mundane_budget.min(*b);
            }
            if let Some(Clearing::Uniform { .. }) = clearing {
                m.max_uniform_budget = m.max_uniform_budget.max(b.abs());
            }
        }
        records.push(SlotRecord { state, reward: report.reward, value, decisions });
    }
    let n = f64::from(slots.max(1));
    m.reward /= n;
    m.social_welfare /= n;
    m.budget /= n;
    m.latency /= n;
    m.entropy /= decisions_total.max(1) as f64;
    let tail = match actor {
        Actor::Learned { agents, .. } => {
            env.begin()?;
            agents.value(&env.global_state())?
        }
        Actor::Fixed(_) => 0.0,
    };
    Ok(Episode { records, tail, metrics: m })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub reward: f64,
    pub social_welfare: f64,
    pub budget: f64,
    pub latency: f64,
    pub entropy: f64,
    pub episode_rewards: Vec<f64>,
    pub update: UpdateStats,
}

/// Mean of episode metrics.
pub fn mean_metrics(episodes: &[EpisodeMetrics]) -> EpisodeMetrics {
    let n = episodes.len().max(1) as f64;
    let mut out = EpisodeMetrics { min_mundane_budget: f64::INFINITY, ..Default::default() };
    for e in episodes {
        out.reward += e.reward / n;
        out.social_welfare += e.social_welfare / n;
        out.budget += e.budget / n;
        out.latency += e.latency / n;
        out.entropy += e.entropy / n;
        out.min_mundane_budget = out.min_mundane_budget.min(e.min_mundane_budget);
        out.max_uniform_budget = out.max_uniform_budget.max(e.max_uniform_budget);
        out.mundane_buyers += e.mundane_buyers;
        out.urgent_buyers += e.urgent_buyers;
    }
    out
}

pub struct Trainer {
    cfg: TrainConfig,
    learner: Learner,
    rng: ChaCha8Rng,
    epoch: u32,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, seed: u64) -> Result<Self, MarlError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = Agents::init(&cfg, &mut rng);
        let learner = Learner::new(agents.policies, agents.critic, cfg.ppo.clone());
        Ok(Self { cfg, learner, rng, epoch: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn agents(&self) -> Agents {
        Agents {
            policies: self.learner.policies.clone(),
            critic: self.learner.critic.clone(),
            value_norm: self.learner.value_norm.clone(),
        }
    }

    /// Collects `episodes_per_epoch` episodes in parallel, then applies one
    /// PPO update.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics, MarlError> {
        let agents = self.agents();
        let seeds: Vec<(u64, u64)> =
            (0..self.cfg.episodes_per_epoch).map(|_| (self.rng.random(), self.rng.random())).collect();
        let episodes: Vec<Episode> = seeds
            .par_iter()
            .map(|&(w, a)| {
                run_episode(
                    Actor::Learned { agents: &agents, greedy: false },
                    &self.cfg.world,
                    self.cfg.episode_slots,
                    w,
                    a,
                )
            })
            .collect::<Result<_, _>>()?;

        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut old_logp = Vec::new();
        let mut advantages = Vec::new();
        let mut owners = Vec::new();
        let mut states = Vec::new();
        let mut returns = Vec::new();
        for ep in &episodes {
            let rewards: Vec<f64> = ep.records.iter().map(|r| r.reward).collect();
            let values: Vec<f64> = ep.records.iter().map(|r| r.value).collect();
            // Episodes are time-limit truncations, so the tail is bootstrapped.
            let g = bootstrapped_returns(&rewards, self.cfg.ppo.gamma, ep.tail);
            let adv = match self.cfg.ppo.gae_lambda {
                Some(lambda) => gae(&rewards, &values, ep.tail, self.cfg.ppo.gamma, lambda),
                None => g.iter().zip(&values).map(|(g, v)| g - v).collect(),
            };
            for (t, rec) in ep.records.iter().enumerate() {
                states.extend_from_slice(&rec.state);
                returns.push(g[t]);
                for d in &rec.decisions {
                    obs.extend_from_slice(&d.obs);
                    actions.push(d.action);
                    old_logp.push(d.logp);
                    advantages.push(adv[t]);
                    owners.push(d.owner);
                }
            }
        }
        let rsus = self.cfg.world.population.rsus;
        let pb = PolicyBatch {
            obs: Array2::from_shape_vec((actions.len(), observation_dim(rsus)), obs).expect("observation rows"),
            actions,
            old_logp,
            advantages,
        };
        let states = Array2::from_shape_vec((returns.len(), state_dim(rsus)), states).expect("state rows");
        let update = self.learner.update(&pb, &owners, &states, &returns, &mut self.rng);
        if !self.learner.is_finite() {
            return Err(MarlError::Diverged { epoch: self.epoch });
        }

        let per_episode: Vec<EpisodeMetrics> = episodes.iter().map(|e| e.metrics).collect();
        let mean = mean_metrics(&per_episode);
        let metrics = EpochMetrics {
            epoch: self.epoch,
            reward: mean.reward,
            social_welfare: mean.social_welfare,
            budget: mean.budget,
            latency: mean.latency,
            entropy: mean.entropy,
            episode_rewards: per_episode.iter().map(|e| e.reward).collect(),
            update,
        };
        self.epoch += 1;
        Ok(metrics)
    }
}

/// World and action seeds of evaluation episode `i`; identical for every
/// mechanism evaluated under the same `seed`.
pub fn eval_seeds(seed: u64, episodes: u32) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1_0000_0000);
    (0..episodes).map(|_| (rng.random(), rng.random())).collect()
}

/// Runs `episodes` evaluation episodes in parallel and returns their
/// metrics in episode order.
pub fn evaluate(
    actor: Actor<'_>,
    world: &WorldConfig,
    episodes: u32,
    slots: u32,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>, MarlError> {
    eval_seeds(seed, episodes)
        .par_iter()
        .map(|&(w, a)| run_episode(actor, world, slots, w, a).map(|e| e.metrics))
        .collect()
}

/// Evaluates one of the fixed-rule mechanisms.
pub fn run_baseline(
    kind: Mechanism,
    world: &WorldConfig,
    episodes: u32,
    slots: u32,
    seed: u64,
) -> Result<EpisodeMetrics, MarlError> {
    if kind == Mechanism::Madrl {
        return Err(MarlError::Config("madrl is not a fixed-rule baseline".into()));
    }
    world.validate()?;
    Ok(mean_metrics(&evaluate(Actor::Fixed(kind), world, episodes, slots, seed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Weights keyed by layer name plus the critic's target normaliser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub value_norm: ValueNormalizer,
}

fn dump(prefix: &str, net: &Mlp, out: &mut BTreeMap<String, Tensor>) {
    for (i, l) in net.layers.iter().enumerate() {
        out.insert(
            format!("{prefix}.layer{i}.weight"),
            Tensor { shape: l.w.shape().to_vec(), data: l.w.iter().copied().collect() },
        );
        out.insert(format!("{prefix}.layer{i}.bias"), Tensor { shape: vec![l.b.len()], data: l.b.to_vec() });
    }
}

fn load(prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<Mlp, MarlError> {
    let mut layers = Vec::new();
    while let Some(w) = tensors.get(&format!("{prefix}.layer{}.weight", layers.len())) {
        let i = layers.len();
        let b = tensors
            .get(&format!("{prefix}.layer{i}.bias"))
            .ok_or_else(|| MarlError::Checkpoint(format!("{prefix}.layer{i}.bias missing")))?;
        let bad = || MarlError::Checkpoint(format!("{prefix}.layer{i} has inconsistent shape"));
        let [rows, cols] = w.shape[..] else { return Err(bad()) };
        if b.shape != [cols] || b.data.len() != cols {
            return Err(bad());
        }
        let w = Array2::from_shape_vec((rows, cols), w.data.clone()).map_err(|_| bad())?;
        if layers.last().is_some_and(|prev: &crate::nn::Dense| prev.w.ncols() != rows) {
            return Err(bad());
        }
        layers.push(crate::nn::Dense { w, b: b.data.clone().into() });
    }
    if layers.is_empty() {
        return Err(MarlError::Checkpoint(format!("no layers for {prefix}")));
    }
    Ok(Mlp { layers })
}

impl Checkpoint {
    pub fn from_agents(agents: &Agents) -> Self {
        let mut tensors = BTreeMap::new();
        for (k, p) in agents.policies.iter().enumerate() {
            dump(&format!("policy{k}"), p, &mut tensors);
        }
        dump("critic", &agents.critic, &mut tensors);
        Self { tensors, value_norm: agents.value_norm.clone() }
    }

    pub fn to_agents(&self) -> Result<Agents, MarlError> {
        let mut policies = Vec::new();
        while self.tensors.contains_key(&format!("policy{}.layer0.weight", policies.len())) {
            policies.push(load(&format!("policy{}", policies.len()), &self.tensors)?);
        }
        if policies.is_empty() {
            return Err(MarlError::Checkpoint("no policy tensors".into()));
        }
        Ok(Agents { policies, critic: load("critic", &self.tensors)?, value_norm: self.value_norm.clone() })
    }
}
