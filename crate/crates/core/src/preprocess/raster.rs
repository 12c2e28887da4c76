use super::PreprocessError;

/// 8-bit raster with one (gray) or three (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::EmptyImage);
        }
        if channels != 1 && channels != 3 {
            return Err(PreprocessError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(PreprocessError::BufferLength {
                expected: width * height * channels,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PreprocessError> {
        Self::new(width, height, 1, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, PreprocessError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Gray value at `(x, y)`; only meaningful for one-channel images.
    pub fn luma(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Rec.601 luma, `round(0.299 R + 0.587 G + 0.114 B)`. Gray input passes through.
pub fn to_grayscale(img: &RasterImage) -> Result<RasterImage, PreprocessError> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|px| {
                    let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                    y.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            RasterImage::gray(img.width, img.height, data)
        }
        n => Err(PreprocessError::Channels(n)),
    }
}
