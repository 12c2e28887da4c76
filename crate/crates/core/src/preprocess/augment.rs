use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::gradcore::{Shape, Tensor};
use crate::mask::BinaryMask;

/// Exact pixel permutations used for augmentation. Rotations are clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationOp {
    Identity,
    Rotate90,
    Rotate180,
    Rotate270,
    FlipH,
    FlipV,
    Transpose,
}

impl AugmentationOp {
    pub const ALL: [AugmentationOp; 7] = [
        AugmentationOp::Identity,
        AugmentationOp::Rotate90,
        AugmentationOp::Rotate180,
        AugmentationOp::Rotate270,
        AugmentationOp::FlipH,
        AugmentationOp::FlipV,
        AugmentationOp::Transpose,
    ];

    /// Uniform choice among the seven ops.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.gen_range(0..Self::ALL.len())]
    }

    /// Output `(width, height)` for an input of `(width, height)`.
    pub fn output_dims(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            Self::Rotate90 | Self::Rotate270 | Self::Transpose => (height, width),
            _ => (width, height),
        }
    }

    /// Source coordinate, in the input grid, of output pixel `(x, y)`.
    fn source(self, x: usize, y: usize, width: usize, height: usize) -> (usize, usize) {
        match self {
            Self::Identity => (x, y),
            Self::Rotate90 => (y, height - 1 - x),
            Self::Rotate180 => (width - 1 - x, height - 1 - y),
            Self::Rotate270 => (width - 1 - y, x),
            Self::FlipH => (width - 1 - x, y),
            Self::FlipV => (x, height - 1 - y),
            Self::Transpose => (y, x),
        }
    }

    /// Permutes a row-major grid; returns the new grid and its `(width, height)`.
    pub fn apply_grid<T: Copy>(self, data: &[T], width: usize, height: usize) -> (Vec<T>, usize, usize) {
        let (ow, oh) = self.output_dims(width, height);
        let mut out = Vec::with_capacity(data.len());
        for y in 0..oh {
            for x in 0..ow {
                let (sx, sy) = self.source(x, y, width, height);
                out.push(data[sy * width + sx]);
            }
        }
        (out, ow, oh)
    }

    pub fn apply_mask(self, mask: &BinaryMask) -> BinaryMask {
        let (data, w, h) = self.apply_grid(mask.data(), mask.width(), mask.height());
        BinaryMask::from_vec(w, h, data).expect("permutation keeps size")
    }

    /// Applies the op to every `(batch, channel)` plane.
    pub fn apply_tensor(self, t: &Tensor) -> Tensor {
        let s = t.shape();
        let (ow, oh) = self.output_dims(s.width, s.height);
        let mut data = Vec::with_capacity(t.numel());
        for b in 0..s.batch {
            for c in 0..s.channels {
                data.extend(self.apply_grid(t.plane(b, c), s.width, s.height).0);
            }
        }
        Tensor::from_vec(Shape::new(s.batch, s.channels, oh, ow), data).expect("permutation keeps size")
    }
}

/// Applies the same permutation to an image tensor and its ground-truth mask.
pub fn augment(
    image: &Tensor,
    gt: &BinaryMask,
    op: AugmentationOp,
) -> Result<(Tensor, BinaryMask), PreprocessError> {
    let s = image.shape();
    if (s.width, s.height) != gt.dims() {
        return Err(PreprocessError::DimMismatch {
            image: (s.width, s.height),
            mask: gt.dims(),
        });
    }
    Ok((op.apply_tensor(image), op.apply_mask(gt)))
}
