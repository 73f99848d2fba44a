//! Buyers learn which submarket to enter. Every buyer acts on a local
//! observation, all buyers share the slot reward, and a centralised critic
//! scores the global market state.

pub mod env;
pub mod nn;
pub mod ppo;
pub mod train;

use iov_bazaar_core::world::WorldError;
use thiserror::Error;

pub use env::{MarketEnv, Mechanism};
pub use iov_bazaar_core::world::reward;
pub use train::{evaluate, run_baseline, Actor, Agents, Checkpoint, EpisodeMetrics, EpochMetrics, TrainConfig, Trainer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarlError {
    #[error("input has {got} features, network expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    /// `field` is a dotted path relative to the training configuration.
    #[error("{field}: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("parameters became non-finite after epoch {epoch}")]
    Diverged { epoch: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
