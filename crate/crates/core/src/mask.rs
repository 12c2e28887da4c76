use thiserror::Error;

use crate::gradcore::{Shape, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask buffer has {len} entries, expected {width}x{height}")]
    BufferLength { width: usize, height: usize, len: usize },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("value {value} at index {index} is not binary (expected 0 or 1)")]
    NotBinary { index: usize, value: f32 },
}

/// 2-D boolean raster in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self, MaskError> {
        if data.len() != width * height {
            return Err(MaskError::BufferLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Parses a `(1, 1, h, w)` (or any single-plane) tensor whose values are exactly 0 or 1.
    pub fn from_tensor_plane(values: &[f32], width: usize, height: usize) -> Result<Self, MaskError> {
        if values.len() != width * height {
            return Err(MaskError::BufferLength {
                width,
                height,
                len: values.len(),
            });
        }
        let data = values
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                _ => Err(MaskError::NotBinary { index, value }),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    pub fn ensure_same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// `(1, 1, height, width)` tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            Shape::new(1, 1, self.height, self.width),
            self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        )
        .expect("dims match buffer")
    }

    /// Nearest-neighbour resize (half-pixel centers), keeping the mask binary.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            self.get(sx, sy)
        })
    }
}
