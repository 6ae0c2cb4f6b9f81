//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plan::CachePolicy;
use crate::dataset::{load_squad, DatasetError, IdPolicy, QaDataset};
use crate::sampling::{DEFAULT_BUDGETS, DEFAULT_FOLDS, DEFAULT_TEST_SIZE};
use crate::strategies::{MergeOptions, DEFAULT_OVERSAMPLE};
use crate::synthetic::{generate, SyntheticProfile};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Where a dataset comes from: a SQuAD JSON file or a built-in synthetic profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<String>,
    /// Generator seed for synthetic sources.
    #[serde(default)]
    pub synthetic_seed: u64,
}

impl DatasetSource {
    pub fn synthetic(profile: &str) -> Self {
        DatasetSource {
            name: profile.to_string(),
            path: None,
            synthetic: Some(profile.to_string()),
            synthetic_seed: 0,
        }
    }

    pub fn load(&self) -> Result<QaDataset, ConfigError> {
        let mut d = match (&self.path, &self.synthetic) {
            (Some(path), None) => load_squad(path, IdPolicy::Unique)?,
            (None, Some(profile)) => {
                let p = SyntheticProfile::by_name(profile)
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown synthetic profile {profile:?}")))?;
                generate(&p, self.synthetic_seed)
            }
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "dataset {:?} needs exactly one of \"path\" or \"synthetic\"",
                    self.name
                )))
            }
        };
        d.name = self.name.clone();
        Ok(d)
    }
}

/// Per-stage epoch counts keyed by the stage's data scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochOverrides {
    pub corpus: Option<usize>,
    pub general: Option<usize>,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Target datasets.
    #[serde(default = "default_targets")]
    pub datasets: Vec<DatasetSource>,
    /// The general QA dataset used by SQuAD and merge stages.
    #[serde(default = "default_general")]
    pub general: DatasetSource,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    /// Strategy allowlist; all eighteen when absent.
    #[serde(default)]
    pub strategies: Option<Vec<String>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// External backend command line; the built-in trainer when absent.
    #[serde(default)]
    pub backend: Option<Vec<String>>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Base training settings; backend defaults when absent.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub epochs: EpochOverrides,
    #[serde(default = "default_oversample")]
    pub oversample_factor: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cache: CachePolicy,
}

fn default_targets() -> Vec<DatasetSource> {
    SyntheticProfile::targets().iter().map(|p| DatasetSource::synthetic(&p.name)).collect()
}

fn default_general() -> DatasetSource {
    DatasetSource::synthetic(&SyntheticProfile::general().name)
}

fn default_budgets() -> Vec<usize> {
    DEFAULT_BUDGETS.to_vec()
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

fn default_workers() -> usize {
    1
}

fn default_oversample() -> usize {
    DEFAULT_OVERSAMPLE
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    /// Reads `path`; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for src in cfg.datasets.iter_mut().chain(std::iter::once(&mut cfg.general)) {
            if let Some(p) = &src.path {
                if p.is_relative() {
                    src.path = Some(base.join(p));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.datasets.is_empty() {
            return bad("no target datasets");
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return bad("budgets must be a non-empty list of positive sizes");
        }
        if self.folds == 0 || self.test_size == 0 {
            return bad("folds and test_size must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.oversample_factor == 0 {
            return bad("oversample_factor must be at least 1");
        }
        if matches!(&self.backend, Some(cmd) if cmd.is_empty()) {
            return bad("backend command is empty");
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("dataset names must be unique");
        }
        if let Some(t) = &self.train {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn dataset_names(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.name.clone()).collect()
    }

    pub fn merge_options(&self) -> MergeOptions {
        MergeOptions {
            oversample_factor: self.oversample_factor,
            ..MergeOptions::default()
        }
    }

    /// Training settings of the chosen backend before per-stage overrides.
    pub fn base_train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| match self.backend {
            None => TrainConfig::builtin_default(),
            Some(_) => TrainConfig::external_default(),
        })
    }

    /// Settings for a stage whose data scale is `corpus`, `general` or `target`.
    /// External backends default to 2 epochs on general-scale data and 10 on
    /// target-only data.
    pub fn stage_config(&self, data_scale: &str) -> TrainConfig {
        let mut cfg = self.base_train_config();
        let external = self.backend.is_some() && self.train.is_none();
        let epochs = match data_scale {
            "corpus" => self.epochs.corpus,
            "general" => self.epochs.general,
            _ => self.epochs.target.or((external).then_some(10)),
        };
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_desk_grid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.dataset_names(), ["synth-near", "synth-far"]);
        assert_eq!(c.budgets, DEFAULT_BUDGETS);
        assert_eq!(c.folds, 5);
        assert_eq!(c.stage_config("target"), TrainConfig::builtin_default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"budget": [100]}"#).is_err());
    }

    #[test]
    fn external_backends_get_scale_dependent_epochs() {
        let c: RunConfig = serde_json::from_str(r#"{"backend": ["python", "-m", "x"]}"#).unwrap();
        assert_eq!(c.stage_config("general").epochs, 2);
        assert_eq!(c.stage_config("target").epochs, 10);
        assert_eq!(c.stage_config("target").learning_rate, 3e-5);
        let c: RunConfig = serde_json::from_str(r#"{"epochs": {"general": 3}}"#).unwrap();
        assert_eq!(c.stage_config("general").epochs, 3);
        assert_eq!(c.stage_config("target").epochs, 20);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"datasets": [{"name": "covid", "path": "covid.json"}], "workers": 2}"#).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.datasets[0].path.as_deref(), Some(dir.path().join("covid.json").as_path()));
        std::fs::write(&path, r#"{"workers": 0}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn sources_need_exactly_one_origin() {
        let s = DatasetSource {
            name: "x".into(),
            path: None,
            synthetic: None,
            synthetic_seed: 0,
        };
        assert!(matches!(s.load(), Err(ConfigError::Invalid(_))));
        let d = DatasetSource::synthetic("synth-near").load().unwrap();
        assert_eq!(d.name, "synth-near");
        assert_eq!(d.len(), 2000);
    }
}
