use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evalviz::TsneConfig;
use crate::model::ModelConfig;
use crate::semisup::SemisupConfig;
use crate::trainer::TrainerConfig;
use crate::{Error, Result};

/// Everything a CLI run reads from its TOML config. Every key is optional;
/// an empty file yields the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for model initialisation.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub semisup: SemisupConfig,
    pub tsne: TsneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            semisup: SemisupConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        self.semisup.validate()
    }

    /// Sets every seed in the config to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.trainer.seed = seed;
        self.semisup.seed = seed;
        self.tsne.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
