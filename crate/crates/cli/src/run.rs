//! One seeded run: training or baseline evaluation, written to
//! `<output_dir>/<name>/{config.json, metrics.csv, checkpoint/, figures/}`.

use std::fs;
use std::path::{Path, PathBuf};

use iov_bazaar_marl::train::mean_metrics;
use iov_bazaar_marl::{evaluate, Actor, Checkpoint, EpisodeMetrics, EpochMetrics, Mechanism, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{io_error, CliError};

pub const COLUMNS: [&str; 10] =
    ["mechanism", "vehicles", "seed", "phase", "epoch", "reward", "social_welfare", "budget", "latency_s", "entropy"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// One row per training epoch, averaged over that epoch's episodes.
    Train,
    /// One row per evaluation episode; `epoch` is the episode index.
    Eval,
}

/// Rewards and welfare are per-slot means; latency is in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mechanism: Mechanism,
    pub vehicles: u32,
    pub seed: u64,
    pub phase: Phase,
    pub epoch: u32,
    pub reward: f64,
    pub social_welfare: f64,
    pub budget: f64,
    pub latency_s: f64,
    /// Mean policy entropy in nats; empty for fixed-rule mechanisms.
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mechanism: Mechanism,
    pub vehicles: u32,
    pub seed: u64,
    pub epochs_trained: u32,
    pub eval_episodes: u32,
    pub reward: f64,
    pub social_welfare: f64,
    pub budget: f64,
    pub latency_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    if rows.is_empty() {
        w.write_record(COLUMNS).map_err(runtime)?;
    }
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(runtime)?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(CliError::Runtime(format!("{}: unexpected columns {:?}", path.display(), headers)));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| io_error(path, e))
}

/// Validates `cfg`, then trains (madrl) or evaluates (fixed rules) and writes
/// the run directory. `progress` sees every finished training epoch.
pub fn run(cfg: &ExperimentConfig, mut progress: impl FnMut(&EpochMetrics)) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let seed = cfg.seed();
    let vehicles = cfg.train.world.population.vehicles;
    let dir = cfg.output_dir.join(cfg.run_name());
    let checkpoint_dir = dir.join("checkpoint");
    for d in [&checkpoint_dir, &dir.join("figures")] {
        fs::create_dir_all(d).map_err(|e| io_error(d, e))?;
    }
    write_json(&dir.join("config.json"), &cfg)?;
    let row = |phase, epoch, m: (f64, f64, f64, f64), entropy| MetricsRow {
        mechanism: cfg.mechanism,
        vehicles,
        seed,
        phase,
        epoch,
        reward: m.0,
        social_welfare: m.1,
        budget: m.2,
        latency_s: m.3,
        entropy,
    };

    let mut rows = Vec::new();
    let slots = cfg.train.episode_slots;
    let episodes = match cfg.mechanism {
        Mechanism::Madrl => {
            let mut trainer = Trainer::new(cfg.train.clone(), seed).map_err(|e| CliError::Config(e.to_string()))?;
            for _ in 0..cfg.train.epochs {
                match trainer.train_epoch() {
                    Ok(m) => {
                        rows.push(row(
                            Phase::Train,
                            m.epoch,
                            (m.reward, m.social_welfare, m.budget, m.latency),
                            Some(m.entropy),
                        ));
                        progress(&m);
                    }
                    Err(e) => {
                        write_metrics(&dir.join("metrics.csv"), &rows)?;
                        return Err(runtime(e));
                    }
                }
            }
            let agents = trainer.agents();
            write_json(&checkpoint_dir.join("agents.json"), &Checkpoint::from_agents(&agents))?;
            evaluate(Actor::Learned { agents: &agents, greedy: true }, &cfg.train.world, cfg.eval_episodes, slots, seed)
        }
        fixed => evaluate(Actor::Fixed(fixed), &cfg.train.world, cfg.eval_episodes, slots, seed),
    }
    .map_err(runtime)?;
    let learned = cfg.mechanism == Mechanism::Madrl;
    for (i, e) in episodes.iter().enumerate() {
        let entropy = learned.then_some(e.entropy);
        rows.push(row(Phase::Eval, i as u32, (e.reward, e.social_welfare, e.budget, e.latency), entropy));
    }
    write_metrics(&dir.join("metrics.csv"), &rows)?;

    let mean: EpisodeMetrics = mean_metrics(&episodes);
    let summary = RunSummary {
        mechanism: cfg.mechanism,
        vehicles,
        seed,
        epochs_trained: if learned { cfg.train.epochs } else { 0 },
        eval_episodes: cfg.eval_episodes,
        reward: mean.reward,
        social_welfare: mean.social_welfare,
        budget: mean.budget,
        latency_s: mean.latency,
    };
    write_json(&checkpoint_dir.join("summary.json"), &summary)?;
    Ok(RunOutput { dir, rows, summary })
}
