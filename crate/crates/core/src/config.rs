//! Run configuration files (TOML, versioned, unknown keys rejected).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ShowerRecipe;
use crate::error::{QfanError, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// The 25-pixel setting: three qubits, three layers, five blocks of five.
    pub fn wide() -> Self {
        Self {
            model: ModelConfig {
                layers: 3,
                sketch_dim: 64,
                block_size: Some(5),
                ..ModelConfig::default()
            },
            ..Self::default()
        }
    }

    /// The short hardware-style budget: 20 steps of 24 samples.
    pub fn short_budget() -> Self {
        let mut c = Self::default();
        c.train.steps = 20;
        c.train.batch = 24;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(QfanError::InvalidConfig(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA})",
                self.schema_version
            )));
        }
        self.train.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| QfanError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QfanError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Data generator file: a schema version and a `[recipe]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub recipe: ShowerRecipe,
}

impl RecipeConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| QfanError::InvalidConfig(e.to_string()))?;
        if config.schema_version != CONFIG_SCHEMA {
            return Err(QfanError::InvalidConfig(format!(
                "unsupported schema_version {}",
                config.schema_version
            )));
        }
        config.recipe.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::BandwidthMode;

    #[test]
    fn recipe_files() {
        let r = RecipeConfig::from_toml("schema_version = 1\n[recipe]\nfluctuation = 0.2\n").unwrap();
        assert_eq!(r.recipe.fluctuation, 0.2);
        assert_eq!(r.recipe.energy_mean, ShowerRecipe::default().energy_mean);
        assert!(RecipeConfig::from_toml("schema_version = 1\n[recipe]\nenergy_spread = -1.0\n").is_err());
        assert!(RecipeConfig::from_toml("schema_version = 1\n[recipe]\nwobble = 1.0\n").is_err());
    }

    #[test]
    fn round_trip_and_defaults() {
        let c = RunConfig::wide();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let minimal = RunConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(minimal, RunConfig::default());
        assert_eq!(
            (minimal.train.steps, minimal.train.batch, minimal.train.shots),
            (120, 128, 512)
        );
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(RunConfig::from_toml("schema_version = 1\nstepz = 3\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\n[train]\nstepz = 3\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 2\n").is_err());
        assert!(RunConfig::from_toml("seed = 1\n").is_err());
        assert!(RunConfig::from_toml("schema_version = 1\n[train]\nbatch = 1\n").is_err());
    }

    #[test]
    fn bandwidth_spelling() {
        let c = RunConfig::from_toml("schema_version = 1\n[train]\nbandwidth = { fixed = 0.25 }\n").unwrap();
        assert_eq!(c.train.bandwidth, BandwidthMode::Fixed(0.25));
        let c = RunConfig::from_toml("schema_version = 1\n[train]\nbandwidth = \"median\"\nexact = true\n").unwrap();
        assert!(c.train.exact);
    }
}
