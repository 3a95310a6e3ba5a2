//! Optimization: Adam over the MSE + orthogonality objective, epoch loop
//! with early stopping, and checkpoint persistence.

mod adam;
mod checkpoint;
mod fit;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use fit::{fit, total_loss_op, EarlyStopping, EpochRecord, FitResult};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evaluation::EvalError;
use crate::model::ModelConfig;
use crate::numerics::TensorError;

/// Everything a training run needs beyond the data itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Decision threshold used for validation F1 and stored for inference.
    pub threshold: f64,
    pub seed: u64,
    /// Coefficient on the orthogonality penalty; 1 is the objective's
    /// literal form, 0 ablates the regularizer.
    pub regularizer_weight: f64,
    /// Fraction of the training data held out for validation.
    pub val_ratio: f64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be positive");
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return fail("patience must be positive and below max_epochs");
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return fail("threshold must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.regularizer_weight < 0.0 {
            return fail("regularizer_weight must be nonnegative");
        }
        if !(0.0 < self.val_ratio && self.val_ratio < 1.0) {
            return fail("val_ratio must lie in (0, 1)");
        }
        if self.model.hidden == 0
            || self.model.topics == 0
            || self.model.p1 == 0
            || self.model.p2 == 0
            || self.model.embedding_dim == 0
        {
            return fail("model dimensions must be positive");
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum TrainError {
    InvalidConfig(String),
    EmptyTrainingSet,
    EmptyValidationSet,
    Io(std::io::Error),
    /// Truncated file, bad magic, or checksum mismatch.
    Corrupt(String),
    UnsupportedVersion(u32),
    Json(serde_json::Error),
    MissingTensor(String),
    BadShape(String),
    Tensor(TensorError),
    Eval(EvalError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            TrainError::EmptyTrainingSet => write!(f, "training set is empty"),
            TrainError::EmptyValidationSet => write!(f, "validation set is empty"),
            TrainError::Io(e) => write!(f, "i/o error: {e}"),
            TrainError::Corrupt(msg) => write!(f, "corrupt checkpoint: {msg}"),
            TrainError::UnsupportedVersion(v) => {
                write!(f, "unsupported checkpoint version {v}, expected {CHECKPOINT_VERSION}")
            }
            TrainError::Json(e) => write!(f, "json error: {e}"),
            TrainError::MissingTensor(name) => write!(f, "checkpoint lacks tensor {name}"),
            TrainError::BadShape(name) => write!(f, "checkpoint tensor {name} has a wrong shape"),
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Eval(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

impl From<serde_json::Error> for TrainError {
    fn from(e: serde_json::Error) -> Self {
        TrainError::Json(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e)
    }
}
