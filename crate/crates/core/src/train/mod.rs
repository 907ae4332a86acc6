//! Dataset synthesis and labelling, the weighted multi-task loss, the
//! training loop and the evaluation harness.

mod config;
mod data;
mod eval;
mod fit;
mod loss;

pub use config::{parse_run_config, LossKind, LossWeights, RunConfig, TrainHyper};
pub use data::{
    apply_pesq_labels, load_dataset_dir, load_label_file, save_dataset_dir, synth_dataset, CleanSource,
    LabeledSample, SynthOptions, DEFAULT_SNR_RANGE,
};
pub use eval::{evaluate_model, read_scatter, write_scatter, export_scatter, SampleEstimate, ScatterRow};
pub use fit::{load_train_state, resume, save_train_state, train, write_log, EpochLog, TrainRun, TrainState};
pub use loss::{sample_loss, total_loss, LossParts};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path} line {line}: {msg}")]
    Labels { path: String, line: usize, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no WAV files in clean directory {0}")]
    EmptyCleanDir(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: u64, detail: String },
    #[error("malformed training state: {0}")]
    State(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
