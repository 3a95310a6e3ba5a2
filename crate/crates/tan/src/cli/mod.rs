//! Command-line entry points: training, evaluation, prediction,
//! attention inspection, gradient checking, and the synthetic corpus.

mod attention_export;
mod commands;
mod config;
mod synth;

pub use attention_export::{AttentionExport, Render};
pub use commands::{
    cmd_attention, cmd_eval, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, EvalArgs,
    GradcheckArgs, PredictArgs,
};
pub use config::{DataFormat, Overrides, RunConfig, RunConfigFile};
pub use synth::{corpus_to_xml, generate_corpus, write_synth, CATEGORIES};

use std::fmt;

use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::training::TrainError;

/// Failure classes with fixed process exit codes: 2 for configuration
/// problems, 3 for data problems, 4 for inventory mismatches, 1 for
/// failed checks and internal errors.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Inventory(String),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Inventory(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Inventory(msg) => write!(f, "inventory mismatch: {msg}"),
            CliError::Check(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::Tensor(_) => CliError::Check(e.to_string()),
            TrainError::Eval(inner) => CliError::from(inner),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InventoryMismatch { .. } => CliError::Inventory(e.to_string()),
            other => CliError::Check(other.to_string()),
        }
    }
}
