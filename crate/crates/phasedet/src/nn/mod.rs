//! Deterministic numeric kernels for the 1D-CNN: tensors, convolution,
//! pooling, dense layers, activations, loss, optimizer, and a finite
//! difference gradient oracle.
//!
//! Everything runs in `f64`, single-threaded, with a fixed accumulation
//! order, so identical inputs always produce bitwise identical outputs.

mod gradcheck;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use gradcheck::finite_diff_gradient;
pub use layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, maxpool1d_backward,
    maxpool1d_forward, Activation, Conv1dGrads, DenseGrads,
};
pub use loss::mse_loss;
pub use optim::{adam_step, AdamParams, AdamState};
pub use tensor::{Tensor2, Tensor3};

use thiserror::Error;

/// Errors raised by the numeric kernels.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("{context}: data contains non-finite values")]
    NonFinite { context: &'static str },
    #[error("{0}: input is empty")]
    Empty(&'static str),
    #[error("max pooling needs at least {pool} rows, input has {rows}")]
    PoolTooLarge { pool: usize, rows: usize },
}
