//! Minimal reverse-mode differentiation over rank-4 `f32` tensors.
//!
//! The operator set is exactly what the segmentation network needs: dilated
//! convolution, batch norm, ReLU, sigmoid, 2x2 max pooling, bilinear resize,
//! addition and channel concatenation, plus scalar reductions for losses.
//! [`ops`] holds the pure kernels, [`Tape`] records and replays them, and
//! [`AdamState`] applies updates.

use std::collections::BTreeMap;

use thiserror::Error;

mod adam;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use ops::{BatchNormState, ConvSpec};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::{Axis, Shape, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch on the {axis} axis (expected {expected}, found {found})")]
    ShapeMismatch {
        op: &'static str,
        axis: Axis,
        expected: usize,
        found: usize,
    },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("{op}: empty spatial extent {height}x{width}")]
    EmptySpatial {
        op: &'static str,
        height: usize,
        width: usize,
    },
    #[error("downsample2x needs even spatial dims, got {height}x{width}; pad the input to even size first")]
    OddSpatial { height: usize, width: usize },
    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("{0}")]
    InvalidArgument(String),
}

/// Learnable tensors plus non-learned buffers (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}
