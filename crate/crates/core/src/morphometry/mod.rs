//! Vessel width estimation from a binary segmentation: thinning to a
//! centerline, exact distance to it, and widths read off the mask contour.

use thiserror::Error;

mod edt;
mod thinning;
mod width;

pub use edt::{edt_to_skeleton, DistanceMap};
pub use thinning::{label_components, skeletonize};
pub use width::{extract_contour, overlay, width_map, WidthAnalysis, WidthMap, WidthRow};

use crate::mask::MaskError;
use crate::preprocess::PreprocessError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MorphError {
    #[error("skeleton is empty but the mask has foreground pixels")]
    EmptySkeleton,
    #[error("image is {}x{} but the width map is {}x{}", found.0, found.1, expected.0, expected.1)]
    DimMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Raster(#[from] PreprocessError),
}
