//! Input conditioning: grayscale, CLAHE, resize and normalization, plus the
//! right-angle augmentations used during training.

use thiserror::Error;

mod augment;
mod clahe;
mod raster;

pub use augment::{augment, AugmentationOp};
pub use clahe::{clahe, clip_histogram, equalization_lut, ClaheConfig};
pub use raster::{to_grayscale, RasterImage};

use crate::gradcore::{ops, Shape, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("pixel buffer has {found} bytes, expected {expected}")]
    BufferLength { expected: usize, found: usize },
    #[error("image {width}x{height} is smaller than the {}x{} tile grid", tiles.0, tiles.1)]
    TooSmallForTiles {
        width: usize,
        height: usize,
        tiles: (usize, usize),
    },
    #[error("image is {}x{} but mask is {}x{}", image.0, image.1, mask.0, mask.1)]
    DimMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("{0}")]
    Config(String),
}

/// Gray conversion, CLAHE, bilinear resize to `size` (height, width) and scaling to `[0, 1]`.
pub fn prepare(img: &RasterImage, size: (usize, usize), cfg: &ClaheConfig) -> Result<Tensor, PreprocessError> {
    let gray = to_grayscale(img)?;
    let eq = clahe(&gray, cfg)?;
    let t = Tensor::from_vec(
        Shape::new(1, 1, eq.height(), eq.width()),
        eq.data().iter().map(|&v| v as f32).collect(),
    )
    .expect("dims match buffer");
    let resized = ops::resize_bilinear(&t, size.0, size.1).map_err(|e| PreprocessError::Config(e.to_string()))?;
    Ok(resized.map(|v| (v / 255.0).clamp(0.0, 1.0)))
}

/// [`prepare`] at the default 512x512 size with default CLAHE settings.
pub fn prepare_default(img: &RasterImage) -> Result<Tensor, PreprocessError> {
    prepare(img, (512, 512), &ClaheConfig::default())
}
