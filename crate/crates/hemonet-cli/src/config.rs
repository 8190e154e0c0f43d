//! Run configuration: one JSON document per run, with command-line flags
//! overriding file values.

use anyhow::{bail, Context, Result};
use hemonet::arch::{presets, ArchitectureConfig};
use hemonet::data::{AugmentPlan, Filter, SplitRatios};
use hemonet::ensemble::FusionSpec;
use hemonet::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Architecture selection: a preset name or an inline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(String),
    Inline(Box<ArchitectureConfig>),
}

impl Default for ArchChoice {
    fn default() -> Self {
        ArchChoice::Preset("densenet_mini".to_string())
    }
}

impl ArchChoice {
    /// Resolves to a concrete architecture for `classes` output classes.
    pub fn resolve(&self, classes: usize) -> Result<ArchitectureConfig> {
        match self {
            ArchChoice::Preset(name) => presets::by_name(name, classes)
                .with_context(|| format!("unknown architecture preset `{name}`")),
            ArchChoice::Inline(config) => {
                if config.classes != classes {
                    bail!(
                        "inline architecture declares {} classes but the dataset has {}",
                        config.classes,
                        classes
                    );
                }
                Ok((**config).clone())
            }
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// The run configuration file. Every field has a default, so a minimal run
/// only needs a dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Class-folder dataset root.
    #[serde(default)]
    pub dataset_root: Option<PathBuf>,
    /// Artifact directory.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub architecture: ArchChoice,
    #[serde(default)]
    pub training: TrainingConfigFile,
    /// Train/validation/test fractions.
    #[serde(default)]
    pub split: SplitRatiosFile,
    /// Augmentation of the training split; absent means no augmentation.
    #[serde(default)]
    pub augment: Option<AugmentPlan>,
    /// Directory to materialize augmented images into (optional).
    #[serde(default)]
    pub materialize_augmented: Option<PathBuf>,
    /// Preprocessing filters applied to every image after decoding.
    #[serde(default)]
    pub filters: Vec<Filter>,
    /// Ensemble fusion rule.
    #[serde(default)]
    pub fusion: Option<FusionSpec>,
}

/// Training block of the config file, mirroring [`TrainingConfig`] minus the
/// seed (the run seed is shared).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfigFile {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f32,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_optimizer")]
    pub optimizer: hemonet::optim::OptimizerKind,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub min_delta: f32,
}

fn d_epochs() -> usize {
    60
}
fn d_batch() -> usize {
    16
}
fn d_lr() -> f32 {
    1e-4
}
fn d_dropout() -> f64 {
    0.1
}
fn d_optimizer() -> hemonet::optim::OptimizerKind {
    hemonet::optim::OptimizerKind::Adam
}
fn d_patience() -> usize {
    10
}

impl Default for TrainingConfigFile {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            dropout: d_dropout(),
            optimizer: d_optimizer(),
            patience: d_patience(),
            min_delta: 0.0,
        }
    }
}

impl TrainingConfigFile {
    pub fn to_training_config(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            dropout: self.dropout,
            optimizer: self.optimizer,
            patience: self.patience,
            min_delta: self.min_delta,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatiosFile {
    #[serde(default = "d_train")]
    pub train: f64,
    #[serde(default = "d_val")]
    pub validation: f64,
    #[serde(default = "d_test")]
    pub test: f64,
}

fn d_train() -> f64 {
    0.7
}
fn d_val() -> f64 {
    0.2
}
fn d_test() -> f64 {
    0.1
}

impl Default for SplitRatiosFile {
    fn default() -> Self {
        Self {
            train: d_train(),
            validation: d_val(),
            test: d_test(),
        }
    }
}

impl From<SplitRatiosFile> for SplitRatios {
    fn from(v: SplitRatiosFile) -> Self {
        SplitRatios {
            train: v.train,
            validation: v.validation,
            test: v.test,
        }
    }
}

impl RunConfig {
    /// Loads the file when given, otherwise starts from defaults; then
    /// applies flag overrides.
    pub fn load(
        path: Option<&Path>,
        seed_flag: Option<u64>,
        out_flag: Option<&Path>,
    ) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = seed_flag {
            config.seed = seed;
        }
        if let Some(out) = out_flag {
            config.out_dir = out.to_path_buf();
        }
        Ok(config)
    }

    /// Digest of the effective configuration, stamped into artifacts.
    pub fn digest(&self) -> String {
        hemonet::checkpoint::config_digest(self)
    }
}
