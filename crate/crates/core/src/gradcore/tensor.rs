use std::fmt;

use super::GradError;

/// Axis of a rank-4 `(batch, channels, height, width)` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Batch,
    Channels,
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Axis::Batch => "batch",
            Axis::Channels => "channels",
            Axis::Height => "height",
            Axis::Width => "width",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn dim(&self, axis: Axis) -> usize {
        match axis {
            Axis::Batch => self.batch,
            Axis::Channels => self.channels,
            Axis::Height => self.height,
            Axis::Width => self.width,
        }
    }

    /// Returns the first axis on which `self` and `other` differ.
    pub fn first_mismatch(&self, other: &Shape) -> Option<Axis> {
        [Axis::Batch, Axis::Channels, Axis::Height, Axis::Width]
            .into_iter()
            .find(|&a| self.dim(a) != other.dim(a))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense `(batch, channels, height, width)` array of `f32` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self, GradError> {
        if data.len() != shape.numel() {
            return Err(GradError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// A `(1, n, 1, 1)` tensor, the layout used for per-channel vectors.
    pub fn vector(values: Vec<f32>) -> Self {
        Self {
            shape: Shape::new(1, values.len(), 1, 1),
            data: values,
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f([b, c, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((b * s.channels + c) * s.height + y) * s.width + x
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(b, c, y, x)]
    }

    /// Contiguous `height * width` slice for one `(batch, channel)` pair.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self, GradError> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum in 64-bit precision.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    /// Selects a contiguous range of channels.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self, GradError> {
        if start + len > self.shape.channels {
            return Err(GradError::InvalidArgument(format!(
                "channel slice {start}..{} out of range for {} channels",
                start + len,
                self.shape.channels
            )));
        }
        let s = self.shape;
        let p = s.plane();
        let mut data = Vec::with_capacity(s.batch * len * p);
        for b in 0..s.batch {
            let from = (b * s.channels + start) * p;
            data.extend_from_slice(&self.data[from..from + len * p]);
        }
        Ok(Self {
            shape: Shape::new(s.batch, len, s.height, s.width),
            data,
        })
    }

    /// Selects one batch item, keeping rank 4.
    pub fn batch_item(&self, b: usize) -> Self {
        let s = self.shape;
        let n = s.channels * s.plane();
        Self {
            shape: Shape::new(1, s.channels, s.height, s.width),
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Self, GradError> {
        let first = items
            .first()
            .ok_or_else(|| GradError::InvalidArgument("cannot stack zero tensors".into()))?;
        let expected = first.shape;
        let mut data = Vec::with_capacity(items.len() * expected.numel());
        for t in items {
            if let Some(axis) = expected.first_mismatch(&t.shape) {
                return Err(GradError::ShapeMismatch {
                    op: "stack_batch",
                    axis,
                    expected: expected.dim(axis),
                    found: t.shape.dim(axis),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: Shape::new(
                items.len() * expected.batch,
                expected.channels,
                expected.height,
                expected.width,
            ),
            data,
        })
    }
}
