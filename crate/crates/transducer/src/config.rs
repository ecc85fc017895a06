//! Run configuration file (TOML) with `[model]`, `[train]` and `[task]`
//! tables. Missing keys take their defaults.

use std::fs;
use std::path::Path;

use attn_transducer_core::data::SyntheticTaskConfig;
use attn_transducer_core::model::ModelConfig;
use attn_transducer_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: SyntheticTaskConfig,
}

impl Default for RunConfig {
    /// The synthetic benchmark setup.
    fn default() -> Self {
        let task = SyntheticTaskConfig { vocab_size: 16, ..Default::default() };
        let model = ModelConfig {
            feature_dim: task.feature_dim,
            vocab_size: task.vocab_size,
            ..ModelConfig::default()
        };
        Self { model, train: TrainConfig::default(), task }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.task.validate()?;
        if self.model.feature_dim != self.task.feature_dim {
            return Err(Error::Config(format!(
                "model.feature_dim {} differs from task.feature_dim {}",
                self.model.feature_dim, self.task.feature_dim
            )));
        }
        if self.model.vocab_size != self.task.vocab_size {
            return Err(Error::Config(format!(
                "model.vocab_size {} differs from task.vocab_size {}",
                self.model.vocab_size, self.task.vocab_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        let p = RunConfig::parse("[train]\nsteps = 7\n").unwrap();
        assert_eq!(p.train.steps, 7);
        assert_eq!(p.model, c.model);
    }

    #[test]
    fn rejects_unknown_keys_and_mismatches() {
        assert!(RunConfig::parse("[model]\nwidth = 3\n").is_err());
        assert!(RunConfig::parse("[model]\nvocab_size = 3\n").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rate = -1.0\n").is_err());
    }
}
