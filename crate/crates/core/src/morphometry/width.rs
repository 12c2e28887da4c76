use std::fmt::Write as _;

use super::{edt_to_skeleton, skeletonize, MorphError};
use crate::mask::BinaryMask;
use crate::preprocess::RasterImage;

/// Foreground pixels with at least one 4-neighbour that is background or outside the image.
pub fn extract_contour(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        let (x, y) = (x as isize, y as isize);
        [(0, -1), (1, 0), (0, 1), (-1, 0)]
            .iter()
            .any(|&(dx, dy)| !mask.get_or_false(x + dx, y + dy))
    })
}

/// Per-pixel vessel width in pixels; zero away from the contour.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl WidthMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Widths in hundredths of a pixel, saturating at `u16::MAX`.
    pub fn to_centipixels(&self) -> Vec<u16> {
        self.values
            .iter()
            .map(|&v| (v * 100.0).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthRow {
    pub x: usize,
    pub y: usize,
    pub width: f64,
}

/// Everything the width pipeline produces for one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthAnalysis {
    pub skeleton: BinaryMask,
    pub contour: BinaryMask,
    pub map: WidthMap,
    /// One row per contour pixel, row-major.
    pub rows: Vec<WidthRow>,
}

impl WidthAnalysis {
    /// CSV with header `x,y,width`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,width\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.x, r.y, r.width);
        }
        out
    }
}

/// Skeleton, distance to the skeleton, contour, then `2d + 1` on every contour pixel.
pub fn width_map(mask: &BinaryMask) -> Result<WidthAnalysis, MorphError> {
    let (w, h) = mask.dims();
    let skeleton = skeletonize(mask);
    let contour = extract_contour(mask);
    let mut map = WidthMap::zeros(w, h);
    let mut rows = Vec::new();
    if !mask.is_empty() {
        let dist = edt_to_skeleton(mask, &skeleton)?;
        for y in 0..h {
            for x in 0..w {
                if contour.get(x, y) {
                    let width = 2.0 * dist.at(x, y) + 1.0;
                    map.values[y * w + x] = width;
                    rows.push(WidthRow { x, y, width });
                }
            }
        }
    }
    Ok(WidthAnalysis {
        skeleton,
        contour,
        map,
        rows,
    })
}

/// Colour for a width relative to the largest width: blue (thin) through green to red (thick).
fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        (0.0, 2.0 * t, 1.0 - 2.0 * t)
    } else {
        (2.0 * t - 1.0, 2.0 - 2.0 * t, 0.0)
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// RGB rendering of the width map over a gray copy of `base`.
pub fn overlay(base: &RasterImage, map: &WidthMap) -> Result<RasterImage, MorphError> {
    if (base.width(), base.height()) != (map.width, map.height) {
        return Err(MorphError::DimMismatch {
            expected: (map.width, map.height),
            found: (base.width(), base.height()),
        });
    }
    let max = map.max();
    let mut data = Vec::with_capacity(map.width * map.height * 3);
    for y in 0..map.height {
        for x in 0..map.width {
            let v = map.at(x, y);
            if v > 0.0 {
                data.extend(ramp(if max > 1.0 { (v - 1.0) / (max - 1.0) } else { 0.0 }));
            } else {
                let g = base.luma(x, y);
                data.extend([g, g, g]);
            }
        }
    }
    Ok(RasterImage::new(map.width, map.height, 3, data)?)
}
