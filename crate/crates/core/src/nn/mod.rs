//! Reverse-mode automatic differentiation and the neural primitives the
//! estimator is assembled from.
//!
//! Values are `f64` tensors in row-major order. Operations are methods on
//! [`Tape`]; inputs created with [`Tape::param`] are tracked and receive
//! gradients from [`Tape::backward`]. There is no implicit broadcasting
//! apart from the explicit row-bias add and scalar helpers.

mod attention;
mod chunk;
mod gradcheck;
mod lstm;
mod ops;
mod params;
mod tape;
mod tensor;

pub use attention::{attention_weights, AttentionWeights};
pub use chunk::ChunkLayout;
pub use gradcheck::{grad_check, grad_check_store, relative_error, GradCheckOptions, GradCheckReport};
pub use lstm::LstmWeights;
pub use ops::{conv_out_len, LAYER_NORM_EPS};
pub use params::{AdamConfig, Binder, GradMap, Param, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} does not match {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must have one element, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("input of length {len} is shorter than {needed}")]
    InputTooShort { len: usize, needed: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
}
