//! The dilated encoder-decoder segmentation network.
//!
//! Three encoder resolutions each run two 3x3 conv layers, add a parallel
//! two-layer path fed by the input image resized to that resolution, and
//! pass the sum through a dilated residual block (rate 2) before 2x2 max
//! pooling. The bottleneck stacks residual blocks at rates 1, 2 and 4 and a
//! dilated pyramid with rates 1, 6, 12 and 18. The decoder upsamples,
//! concatenates the matching encoder skip and runs two 3x3 conv layers per
//! resolution. Four sigmoid heads (three decoder resolutions plus the pyramid)
//! produce full-resolution maps that are all supervised by the soft Dice loss.

use thiserror::Error;

mod config;
mod loss;
mod model;
mod train;

pub use config::{DiceLossConfig, NetworkConfig};
pub use loss::{
    dice_data_term, dice_loss, kernel_norm_squared, predict_mask, record_dice, record_loss, soft_dice_term,
    threshold_plane, PredictionSet,
};
pub use model::{dilated_residual_block, dspp, ForwardOutput, Init, Layout, ParamSpec, TapeForward, VesselNet};
pub use train::{train, train_step, Sample, TrainHyper, TrainReport};

use crate::gradcore::{GradError, Shape};
use crate::preprocess::PreprocessError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("network expects a (batch, 1, {}, {}) image but got {found}; run it through preprocessing first", expected.0, expected.1)]
    InputSize { expected: (usize, usize), found: Shape },
    #[error("bottleneck is {height}x{width} but the rate-{rate} pyramid branch spans {span} pixels; use a larger input size")]
    PyramidTooSmall {
        height: usize,
        width: usize,
        rate: usize,
        span: usize,
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("invalid prediction set: {0}")]
    Predictions(String),
    #[error("invalid ground truth: {0}")]
    GroundTruth(String),
    #[error("training data set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}
