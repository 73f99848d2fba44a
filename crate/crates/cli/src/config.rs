//! Experiment configuration: a JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use iov_bazaar_core::world::WorldError;
use iov_bazaar_marl::{MarlError, Mechanism, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Vehicle counts the experiment grid covers.
pub const VEHICLE_RANGE: std::ops::RangeInclusive<u32> = 20..=80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory under `output_dir`; `<mechanism>-v<V>-s<seed>` when absent.
    pub name: Option<String>,
    pub mechanism: Mechanism,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Greedy evaluation episodes after training, or the whole run for a
    /// fixed-rule mechanism.
    pub eval_episodes: u32,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            mechanism: Mechanism::Madrl,
            seed: None,
            output_dir: PathBuf::from("runs"),
            eval_episodes: 20,
            train: TrainConfig { epochs: 300, ..TrainConfig::default() },
        }
    }
}

/// Flag values that replace the corresponding file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mechanism: Option<Mechanism>,
    pub vehicles: Option<u32>,
    pub epochs: Option<u32>,
    pub eval_episodes: Option<u32>,
    pub name: Option<String>,
    pub output_dir: Option<PathBuf>,
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid config: {field}: {reason}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path == "." { "<root>" } else { &path }, e.inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(m) = o.mechanism {
            self.mechanism = m;
        }
        if let Some(v) = o.vehicles {
            self.train.world.population.vehicles = v;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(e) = o.eval_episodes {
            self.eval_episodes = e;
        }
        if o.name.is_some() {
            self.name = o.name;
        }
        if let Some(d) = o.output_dir {
            self.output_dir = d;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed.is_none() {
            return Err(invalid("seed", "a seed is required, pass --seed"));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return Err(invalid("name", format!("{name:?} is not a single directory name")));
            }
        }
        if self.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be at least 1"));
        }
        let v = self.train.world.population.vehicles;
        if !VEHICLE_RANGE.contains(&v) {
            return Err(invalid(
                "train.world.population.vehicles",
                format!("must lie in {}..={}, got {v}", VEHICLE_RANGE.start(), VEHICLE_RANGE.end()),
            ));
        }
        if self.mechanism == Mechanism::Madrl && self.train.epochs == 0 {
            return Err(invalid("train.epochs", "must be at least 1 for madrl"));
        }
        self.train.validate().map_err(|e| match e {
            MarlError::World(WorldError::InvalidConfig { field, reason }) => invalid(&format!("train.world.{field}"), reason),
            MarlError::InvalidField { field, reason } => invalid(&format!("train.{field}"), reason),
            other => invalid("train", other),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config carries a seed")
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!("{}-v{}-s{}", self.mechanism, self.train.world.population.vehicles, self.seed())
        })
    }

    /// The configuration as recorded next to the metrics, name included.
    pub fn resolved(&self) -> Self {
        Self { name: Some(self.run_name()), ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> ExperimentConfig {
        ExperimentConfig { seed: Some(1), ..Default::default() }
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = valid().resolved();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.train.ppo.learning_rate, 0.001);
        assert_eq!(cfg.train.ppo.gamma, 0.95);
        assert_eq!(cfg.train.world.population.rsus, 4);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"train": {"ppo": {"learning_rate": "fast"}}}"#).unwrap_err();
        assert!(err.to_string().contains("train.ppo.learning_rate"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"train": {"world": {"alpah": 1}}}"#).unwrap_err();
        assert!(err.to_string().contains("train.world") && err.to_string().contains("alpah"), "{err}");

        let mut cfg = valid();
        cfg.train.ppo.learning_rate = -1.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("train.ppo.learning_rate"));
        let mut cfg = valid();
        cfg.train.world.alpha = -1.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("train.world.alpha"));
        let mut cfg = valid();
        cfg.train.world.population.vehicles = 10;
        assert!(cfg.validate().unwrap_err().to_string().contains("train.world.population.vehicles"));
        assert!(ExperimentConfig::default().validate().unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = ExperimentConfig::from_json(r#"{"mechanism": "random", "train": {"epochs": 7}}"#).unwrap();
        cfg.apply(Overrides { seed: Some(9), mechanism: Some(Mechanism::SecondPrice), ..Default::default() });
        assert_eq!(cfg.mechanism, Mechanism::SecondPrice);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.run_name(), "second-price-v40-s9");
    }
}
