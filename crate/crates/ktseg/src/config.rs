//! Run configuration loaded from TOML.
//!
//! ```toml
//! finetune_epochs = 50
//! on_error = "fail_fast"
//!
//! [training]
//! learning_rate = 1e-4
//! batch_size = 4
//! epochs = 500
//!
//! [filter]
//! alpha = 256
//! beta = 2.5
//!
//! [teacher]
//! architecture = "mini_unet"
//! ```
//!
//! Every table and key is optional.

use std::fs;
use std::path::Path;

use ktseg_core::augment::AugmentationConfig;
use ktseg_core::filtering::FilterCriteria;
use ktseg_core::pipeline::ErrorPolicy;
use ktseg_core::synth::SynthSpec;
use ktseg_core::{ArchSpec, TrainingConfig, MINI_DILATED, MINI_UNET};
use serde::{Deserialize, Serialize};

use crate::error::{KtError, Result};

/// Architecture choice for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: String,
    /// Defaults to the architecture's own defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ArchSpec>,
}

impl ModelConfig {
    pub fn new(architecture: &str) -> Self {
        Self {
            architecture: architecture.to_string(),
            spec: None,
        }
    }

    pub fn arch_spec(&self) -> ArchSpec {
        self.spec
            .clone()
            .unwrap_or_else(|| ArchSpec::default_for(&self.architecture))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub finetune_epochs: usize,
    pub on_error: ErrorPolicy,
    pub training: TrainingConfig,
    pub augmentation: AugmentationConfig,
    pub filter: FilterCriteria,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            finetune_epochs: 50,
            on_error: ErrorPolicy::FailFast,
            training: TrainingConfig::default(),
            augmentation: AugmentationConfig::default(),
            filter: FilterCriteria::default(),
            teacher: ModelConfig::new(MINI_UNET),
            student: ModelConfig::new(MINI_DILATED),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| KtError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Reads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.augmentation.validate()?;
        self.filter.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the uniform `--seed` flag.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.training.seed = seed;
            self.synth.seed = seed;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            RunConfig::from_toml("", Path::new("c.toml")).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.training.epoch_budget = Some(348_500);
        cfg.training.learning_rate = 1e-3;
        cfg.filter.apply_entropy = false;
        cfg.student.spec = Some(ArchSpec {
            base_channels: 4,
            ..ArchSpec::default()
        });
        cfg.on_error = ErrorPolicy::SkipAndLog;
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("c.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_tables_and_bad_values() {
        let cfg = RunConfig::from_toml(
            "[training]\nepochs = 30\n[filter]\nbeta = 3.0\n",
            Path::new("c.toml"),
        )
        .unwrap();
        assert_eq!(cfg.training.epochs, 30);
        assert_eq!(cfg.training.batch_size, 4);
        assert_eq!(cfg.filter.beta, 3.0);
        let err = RunConfig::from_toml("[training]\nlearning_rate = -1.0\n", Path::new("c.toml"))
            .unwrap_err();
        assert_eq!(err.kind(), "invalid_config");
        let err = RunConfig::from_toml("[training\n", Path::new("c.toml")).unwrap_err();
        assert_eq!(err.kind(), "parse");
    }
}
