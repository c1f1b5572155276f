//! Root run configuration: one JSON file holding every path and threshold
//! the pipeline uses, so the scattered defaults (attribution threshold 20,
//! change ratios 0.75/0.1, 90-day escalation) live in a single place.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelDims, Paradigm, PretrainConfig, TrainConfig};
use crate::orchestrator::{PipelineConfig, Thresholds};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse failed: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub data_dir: PathBuf,
    pub framework: Option<PathBuf>,
    pub companies: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub alerts: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub prediction_events: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub assertions: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

impl Default for RunPaths {
    fn default() -> Self {
        RunPaths {
            data_dir: PathBuf::from("data"),
            framework: None,
            companies: None,
            annotations: None,
            lexicon: None,
            registry: None,
            state: None,
            journal: None,
            alerts: None,
            predictions: None,
            prediction_events: None,
            ledger: None,
            assertions: None,
            reports: None,
        }
    }
}

macro_rules! path_accessor {
    ($name:ident, $default:expr) => {
        pub fn $name(&self) -> PathBuf {
            self.$name
                .clone()
                .unwrap_or_else(|| self.data_dir.join($default))
        }
    };
}

impl RunPaths {
    path_accessor!(framework, "framework.tsv");
    path_accessor!(companies, "companies.tsv");
    path_accessor!(annotations, "annotations.log");
    path_accessor!(lexicon, "lexicon.tsv");
    path_accessor!(registry, "registry");
    path_accessor!(state, "state.json");
    path_accessor!(journal, "journal.log");
    path_accessor!(alerts, "alerts.log");
    path_accessor!(predictions, "predictions.tsv");
    path_accessor!(prediction_events, "prediction_events.log");
    path_accessor!(ledger, "ledger.tsv");
    path_accessor!(assertions, "assertions.tsv");
    path_accessor!(reports, "reports");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: RunPaths,
    pub attribution_threshold: usize,
    pub thresholds: Thresholds,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub incremental_steps: usize,
    pub incremental_warmup: usize,
    pub pretrain: PretrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        // Desk-scale training budget; the production-scale schedule stays
        // the TrainConfig default for library callers.
        let train = TrainConfig {
            total_steps: 2_400,
            freeze_steps: 240,
            warmup_frozen: 80,
            warmup_joint: 120,
            batch_size: 8,
            paradigm: Paradigm::PromptPlusModelTuning,
            ..TrainConfig::default()
        };
        RunConfig {
            paths: RunPaths::default(),
            attribution_threshold: 20,
            thresholds: Thresholds::default(),
            dims: ModelDims::default(),
            incremental_steps: 300,
            incremental_warmup: 50,
            pretrain: PretrainConfig::default(),
            seed: 42,
            train,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig =
            serde_json::from_slice(&bytes).map_err(|e| ConfigError::Parse(e.to_string()))?;
        // Seed flows into every stochastic stage unless overridden there.
        config.train.seed = config.seed;
        config.pretrain.seed = config.seed;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        crate::persistence::write_atomic(path, &bytes).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            attribution_threshold: self.attribution_threshold,
            thresholds: self.thresholds,
            dims: self.dims,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            incremental_steps: self.incremental_steps,
            incremental_warmup: self.incremental_warmup,
            pretrain: PretrainConfig {
                seed: self.seed,
                ..self.pretrain.clone()
            },
            augment_seed: self.seed,
            shuffle_seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_satisfy_pipeline_validation() {
        let config = RunConfig::default();
        config.pipeline().validate().unwrap();
    }

    #[test]
    fn round_trip_and_seed_propagation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut config = RunConfig {
            seed: 7,
            ..RunConfig::default()
        };
        config.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        config.train.seed = 7;
        config.pretrain.seed = 7;
        assert_eq!(loaded, config);
        assert_eq!(loaded.pipeline().train.seed, 7);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"seed": 9, "attribution_threshold": 5}"#).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.attribution_threshold, 5);
        assert_eq!(loaded.thresholds, Thresholds::default());
    }

    #[test]
    fn default_paths_hang_off_data_dir() {
        let paths = RunPaths::default();
        assert_eq!(paths.framework(), PathBuf::from("data/framework.tsv"));
        assert_eq!(paths.registry(), PathBuf::from("data/registry"));
        let custom = RunPaths {
            framework: Some(PathBuf::from("/elsewhere/f.tsv")),
            ..RunPaths::default()
        };
        assert_eq!(custom.framework(), PathBuf::from("/elsewhere/f.tsv"));
    }

    #[test]
    fn bad_json_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{nope").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse(_))
        ));
    }
}
