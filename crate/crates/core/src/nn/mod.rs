//! Dense neural-network substrate shared by the MF and two-tower trainers.
//!
//! Everything here is generic over a [`Scalar`] so the same forward and
//! backward code runs in `f32` for training and in `f64` when gradients are
//! probed with finite differences. Per-sample dot products and loss sums
//! accumulate in `f64`; batched passes run GEMM in the parameter type.

mod adam;
mod gemm;
mod layers;
mod loss;
mod matrix;
mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState, LayerAdam, MlpAdam};
pub use layers::{relu, relu_backward, LinearGrads, LinearLayer, Mlp, MlpBatchCache, MlpCache, MlpGrads};
pub use loss::{bce_grad_logit, bce_loss, sigmoid, PROB_CLAMP, SIGMOID_CLAMP};
pub use matrix::Matrix;
pub use scalar::{dot, Scalar};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("attempted optimizer step on frozen parameters")]
    Frozen,
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::DimensionMismatch { expected, got })
    }
}
