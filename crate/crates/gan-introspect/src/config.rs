//! JSON configuration for the CLI, mirroring the generator, trainer,
//! dataset and SVCCA settings. Every field has a desk-scale default, so an
//! empty document `{}` is a complete configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataio::SynthConfig;
use crate::error::{Error, Result};
use crate::experiments::ExperimentConfig;
use crate::net::GeneratorConfig;
use crate::svcca::SvccaParams;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvccaSettings {
    pub variance_threshold: f64,
    pub ridge: f64,
}

impl Default for SvccaSettings {
    fn default() -> Self {
        let p = SvccaParams::default();
        SvccaSettings {
            variance_threshold: p.variance_threshold,
            ridge: p.ridge,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_probe_sequences() -> usize {
    4
}

/// Top-level config document.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ConfigFile {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dataset: SynthConfig,
    /// Second dataset for transfer learning; defaults to the first dataset's
    /// shape with a shifted seed.
    #[serde(default)]
    pub dataset_b: Option<SynthConfig>,
    #[serde(default)]
    pub svcca: SvccaSettings,
    /// Replication seeds for the experiment drivers.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Probe sequences fed to activation recording (all frames of each).
    #[serde(default = "default_probe_sequences")]
    pub probe_sequences: usize,
    /// Pre-trained checkpoint for exp2; when absent the driver trains the
    /// base run itself.
    #[serde(default)]
    pub base_checkpoint: Option<PathBuf>,
    /// Frozen-layer variants for exp3 as (label, layer list); defaults to
    /// the A/B/C variants.
    #[serde(default)]
    pub variants: Option<Vec<(String, Vec<String>)>>,
    /// Repeat depths for exp4.
    #[serde(default)]
    pub depths: Option<Vec<usize>>,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<ConfigFile> {
        let cfg: ConfigFile =
            serde_json::from_str(text).map_err(|e| Error::ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        self.dataset.validate()?;
        if let Some(b) = &self.dataset_b {
            b.validate()?;
            if b.q != self.dataset.q {
                return Err(Error::ConfigError(
                    "dataset_b must share the feature dimension of dataset".into(),
                ));
            }
            if b.n_domains != self.dataset.n_domains {
                return Err(Error::ConfigError(
                    "dataset_b must share the domain count of dataset".into(),
                ));
            }
        }
        if self.dataset.q != self.generator.q_features {
            return Err(Error::ConfigError(format!(
                "dataset q ({}) must match generator q_features ({})",
                self.dataset.q, self.generator.q_features
            )));
        }
        if self.dataset.n_domains != self.generator.n_domains {
            return Err(Error::ConfigError(format!(
                "dataset n_domains ({}) must match generator n_domains ({})",
                self.dataset.n_domains, self.generator.n_domains
            )));
        }
        if !(self.svcca.variance_threshold > 0.0 && self.svcca.variance_threshold <= 1.0) {
            return Err(Error::ConfigError("variance_threshold must be in (0, 1]".into()));
        }
        if self.svcca.ridge < 0.0 {
            return Err(Error::ConfigError("ridge must be >= 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::ConfigError("seeds must not be empty".into()));
        }
        if self.probe_sequences == 0 {
            return Err(Error::ConfigError("probe_sequences must be >= 1".into()));
        }
        Ok(())
    }

    /// Second dataset for exp2: explicit `dataset_b` or the first dataset
    /// with a shifted seed.
    pub fn dataset_b_or_derived(&self) -> SynthConfig {
        self.dataset_b.clone().unwrap_or_else(|| {
            let mut b = self.dataset.clone();
            b.seed = b.seed.wrapping_add(0x0b);
            b
        })
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            generator: self.generator.clone(),
            train: self.train.clone(),
            dataset: self.dataset.clone(),
            dataset_b: Some(self.dataset_b_or_derived()),
            svcca: SvccaParams {
                variance_threshold: self.svcca.variance_threshold,
                ridge: self.svcca.ridge,
            },
            probe_sequences: self.probe_sequences,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_desk_scale_default() {
        let cfg = ConfigFile::from_json("{}").unwrap();
        assert_eq!(cfg.generator.q_features, 36);
        assert_eq!(cfg.generator.repeat_blocks, 9);
        assert_eq!(cfg.train.total_iterations, 2000);
        assert_eq!(cfg.train.checkpoint_every, 200);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.crop_frames, 64);
        assert_eq!(cfg.train.weights.lambda_cyc, 10.0);
        assert_eq!(cfg.train.weights.lambda_id, 5.0);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let text = r#"{"train": {"total_iterations": 100, "checkpoint_every": 33,
            "batch_size": 4, "crop_frames": 64, "lr_g": 1e-4, "lr_d": 1e-4,
            "beta1": 0.5, "beta2": 0.999, "adam_eps": 1e-8,
            "lambda_cyc": 10.0, "lambda_id": 5.0, "id_cutoff_iterations": 5,
            "seed": 1}}"#;
        assert!(matches!(
            ConfigFile::from_json(text),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            ConfigFile::from_json("{not json"),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn mismatched_q_is_rejected() {
        let text = r#"{"dataset": {"n_domains": 4, "sentences_per_domain": 5,
            "q": 16, "t_min": 40, "t_max": 60, "seed": 2}}"#;
        assert!(matches!(
            ConfigFile::from_json(text),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn derived_dataset_b_differs_only_in_seed() {
        let cfg = ConfigFile::from_json("{}").unwrap();
        let b = cfg.dataset_b_or_derived();
        assert_eq!(b.q, cfg.dataset.q);
        assert_ne!(b.seed, cfg.dataset.seed);
    }
}
