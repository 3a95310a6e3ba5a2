//! Run configuration: JSON file, built-in defaults, and command-line
//! overrides, in rising precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::OovPolicy;
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

use super::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum DataFormat {
    Semeval2014,
    Semeval2016,
}

/// Fully resolved configuration; what gets echoed into the output
/// directory for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format: DataFormat,
    pub train_xml: Option<PathBuf>,
    pub test_xml: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embedding_fallback: bool,
    pub embedding_dim: usize,
    pub oov_policy: OovPolicy,
    pub stopwords: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub variant: Variant,
    pub topics: usize,
    pub hidden: usize,
    pub p1: usize,
    pub p2: usize,
    pub va_hidden: usize,
    pub dropout: f64,
    pub literal_eq3: bool,
    pub shared_topic_heads: bool,
    pub fine_tune_embeddings: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub threshold: f64,
    pub seed: u64,
    pub regularizer_weight: f64,
    pub val_ratio: f64,
    pub clip_norm: Option<f64>,
    pub sweep_threshold: bool,
    pub argmax_fallback: bool,
}

/// The on-disk form: every field optional, unknown keys rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub format: Option<DataFormat>,
    pub train_xml: Option<PathBuf>,
    pub test_xml: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embedding_fallback: Option<bool>,
    pub embedding_dim: Option<usize>,
    pub oov_policy: Option<OovPolicy>,
    pub stopwords: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub topics: Option<usize>,
    pub hidden: Option<usize>,
    pub p1: Option<usize>,
    pub p2: Option<usize>,
    pub va_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub literal_eq3: Option<bool>,
    pub shared_topic_heads: Option<bool>,
    pub fine_tune_embeddings: Option<bool>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub regularizer_weight: Option<f64>,
    pub val_ratio: Option<f64>,
    pub clip_norm: Option<f64>,
    pub sweep_threshold: Option<bool>,
    pub argmax_fallback: Option<bool>,
}

/// Command-line overrides; highest precedence.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub max_epochs: Option<usize>,
    pub threshold: Option<f64>,
    pub literal_eq3: bool,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&content)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults depend on the dataset format: the 2016 task uses more,
    /// wider topics than the simpler 2014 one.
    pub fn resolve(self, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let format = self.format.unwrap_or(DataFormat::Semeval2014);
        let (topics_default, p1_default, p2_default) = match format {
            DataFormat::Semeval2014 => (6, 16, 32),
            DataFormat::Semeval2016 => (11, 32, 64),
        };
        let config = RunConfig {
            format,
            train_xml: self.train_xml,
            test_xml: self.test_xml,
            embeddings: self.embeddings,
            embedding_fallback: self.embedding_fallback.unwrap_or(true),
            embedding_dim: self.embedding_dim.unwrap_or(300),
            oov_policy: self.oov_policy.unwrap_or_default(),
            stopwords: self.stopwords,
            out_dir: overrides
                .out_dir
                .clone()
                .or(self.out_dir)
                .unwrap_or_else(|| PathBuf::from("runs/latest")),
            variant: overrides.variant.or(self.variant).unwrap_or_default(),
            topics: self.topics.unwrap_or(topics_default),
            hidden: self.hidden.unwrap_or(128),
            p1: self.p1.unwrap_or(p1_default),
            p2: self.p2.unwrap_or(p2_default),
            va_hidden: self.va_hidden.unwrap_or(256),
            dropout: self.dropout.unwrap_or(0.6),
            literal_eq3: overrides.literal_eq3 || self.literal_eq3.unwrap_or(false),
            shared_topic_heads: self.shared_topic_heads.unwrap_or(false),
            fine_tune_embeddings: self.fine_tune_embeddings.unwrap_or(false),
            learning_rate: self.learning_rate.unwrap_or(0.001),
            batch_size: self.batch_size.unwrap_or(128),
            max_epochs: overrides.max_epochs.or(self.max_epochs).unwrap_or(300),
            patience: self.patience.unwrap_or(20),
            threshold: overrides.threshold.or(self.threshold).unwrap_or(0.5),
            seed: overrides.seed.or(self.seed).unwrap_or(42),
            regularizer_weight: self.regularizer_weight.unwrap_or(1.0),
            val_ratio: self.val_ratio.unwrap_or(0.1),
            clip_norm: self.clip_norm,
            sweep_threshold: self.sweep_threshold.unwrap_or(false),
            argmax_fallback: self.argmax_fallback.unwrap_or(false),
        };
        config.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            embedding_dim: self.embedding_dim,
            hidden: self.hidden,
            topics: self.topics,
            p1: self.p1,
            p2: self.p2,
            va_hidden: self.va_hidden,
            dropout: self.dropout,
            literal_eq3: self.literal_eq3,
            shared_topic_heads: self.shared_topic_heads,
            fine_tune_embeddings: self.fine_tune_embeddings,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model_config(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            threshold: self.threshold,
            seed: self.seed,
            regularizer_weight: self.regularizer_weight,
            val_ratio: self.val_ratio,
            clip_norm: self.clip_norm,
        }
    }
}
