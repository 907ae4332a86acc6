//! The estimator network: a strided encoder, a dual-path recurrent trunk,
//! three attention branches with metric-specific output mappings, and a
//! decoder that reconstructs the reference signal for multi-task training.
//!
//! Parameters live in a [`ParamStore`](crate::nn::ParamStore) under dotted
//! names such as `trunk.block2.intra.blstm.fwd.w_ih`; the forward functions
//! look them up through a [`Binder`](crate::nn::Binder).

mod checkpoint;
mod config;
mod init;
mod net;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use init::{exclusive_params, init_params, param_count};
pub(crate) use init::param_specs;
pub use net::{
    branch_forward, decoder_forward, dprnn_block_forward, encoder_forward, forward, model_forward, trunk_forward,
    Branch, BranchOutput, BranchVars, ForwardVars,
};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::nn::NnError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
