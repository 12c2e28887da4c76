use serde::{Deserialize, Serialize};

use super::{PreprocessError, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheConfig {
    /// Tile grid `(columns, rows)`.
    pub tiles: (usize, usize),
    /// Bin ceiling as a multiple of the uniform bin height; `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tiles: (8, 8),
            clip_limit: 2.0,
        }
    }
}

/// Clips a histogram at `clip` and spreads the excess evenly over all bins.
/// The total count is preserved exactly.
pub fn clip_histogram(hist: &mut [u64; 256], clip: u64) {
    let mut excess = 0u64;
    for bin in hist.iter_mut() {
        if *bin > clip {
            excess += *bin - clip;
            *bin = clip;
        }
    }
    let per_bin = excess / 256;
    let remainder = (excess % 256) as usize;
    for bin in hist.iter_mut() {
        *bin += per_bin;
    }
    if remainder > 0 {
        let step = 256 / remainder;
        for i in (0..256).step_by(step).take(remainder) {
            hist[i] += 1;
        }
    }
}

/// Equalization mapping `round(255 (cdf(v) - cdf_min) / (n - cdf_min))`, where
/// `cdf_min` is the cumulative count at the first occupied bin.
/// A histogram with a single occupied bin maps every value to itself.
pub fn equalization_lut(hist: &[u64; 256]) -> [u8; 256] {
    let total: u64 = hist.iter().sum();
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let mut lut = [0u8; 256];
    if total == cdf_min {
        for (v, out) in lut.iter_mut().enumerate() {
            *out = v as u8;
        }
        return lut;
    }
    let denom = (total - cdf_min) as f64;
    let mut cdf = 0u64;
    for (v, out) in lut.iter_mut().enumerate() {
        cdf += hist[v];
        let num = cdf.saturating_sub(cdf_min) as f64;
        *out = (255.0 * num / denom).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Reflect-101 index into `0..len` for `i` in `0..2*len-1`.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

/// Contrast-limited adaptive histogram equalization of a gray image.
///
/// The image is reflect-padded up to a multiple of the tile grid so every tile
/// holds the same number of pixels. Each output pixel blends the mappings of
/// the four nearest tile centres bilinearly.
pub fn clahe(img: &RasterImage, cfg: &ClaheConfig) -> Result<RasterImage, PreprocessError> {
    if img.channels() != 1 {
        return Err(PreprocessError::Channels(img.channels()));
    }
    let (tx, ty) = cfg.tiles;
    let (w, h) = (img.width(), img.height());
    if tx == 0 || ty == 0 {
        return Err(PreprocessError::Config("CLAHE tile counts must be at least 1".into()));
    }
    if !(cfg.clip_limit > 0.0) {
        return Err(PreprocessError::Config("CLAHE clip limit must be positive".into()));
    }
    if w < tx || h < ty {
        return Err(PreprocessError::TooSmallForTiles {
            width: w,
            height: h,
            tiles: cfg.tiles,
        });
    }
    let tw = w.div_ceil(tx);
    let th = h.div_ceil(ty);
    let tile_pixels = (tw * th) as u64;
    let clip = if cfg.clip_limit.is_finite() {
        ((cfg.clip_limit * tile_pixels as f64 / 256.0).floor() as u64).max(1)
    } else {
        u64::MAX
    };

    let mut luts = vec![[0u8; 256]; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0u64; 256];
            for py in j * th..(j + 1) * th {
                let y = reflect(py, h);
                for px in i * tw..(i + 1) * tw {
                    hist[img.luma(reflect(px, w), y) as usize] += 1;
                }
            }
            clip_histogram(&mut hist, clip);
            luts[j * tx + i] = equalization_lut(&hist);
        }
    }

    // tile-centre coordinates: (index, index + 1, weight of the second)
    let axis = |pos: usize, size: usize, count: usize| -> (usize, usize, f64) {
        let t = (pos as f64 + 0.5) / size as f64 - 0.5;
        let lo = t.floor();
        let wgt = t - lo;
        let a = (lo.max(0.0) as usize).min(count - 1);
        let b = ((lo + 1.0).max(0.0) as usize).min(count - 1);
        (a, b, wgt)
    };
    let cols: Vec<_> = (0..w).map(|x| axis(x, tw, tx)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (j0, j1, wy) = axis(y, th, ty);
        for (x, &(i0, i1, wx)) in cols.iter().enumerate() {
            let v = img.luma(x, y) as usize;
            let a = luts[j0 * tx + i0][v] as f64;
            let b = luts[j0 * tx + i1][v] as f64;
            let c = luts[j1 * tx + i0][v] as f64;
            let d = luts[j1 * tx + i1][v] as f64;
            let top = a + (b - a) * wx;
            let bot = c + (d - c) * wx;
            out.push((top + (bot - top) * wy).round().clamp(0.0, 255.0) as u8);
        }
    }
    RasterImage::gray(w, h, out)
}
