//! Forward and backward kernels for the differentiable operator set.
//!
//! Every function here is pure. The [`Tape`](super::Tape) records calls to
//! these kernels and replays the matching `*_backward` functions in reverse.

use super::{Axis, GradError, Shape, Tensor};

/// Target number of output pixels per im2col chunk. Bounds the scratch
/// buffer at `in_ch * kh * kw * CHUNK_PIXELS` floats.
const CHUNK_PIXELS: usize = 8192;

/// Kernel, bias and sampling geometry of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    /// `(out_ch, in_ch, kh, kw)`.
    pub kernel: Tensor,
    pub bias: Vec<f32>,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(kernel: Tensor, bias: Vec<f32>, dilation: usize) -> Self {
        Self {
            kernel,
            bias,
            dilation,
            stride: 1,
        }
    }
}

/// "Same" padding for one spatial axis: returns `(output_len, pad_before)`.
///
/// Matches the symmetric convention where the extra pixel of an odd total
/// pad goes after the data.
pub fn same_padding(len: usize, kernel: usize, dilation: usize, stride: usize) -> (usize, usize) {
    let extent = (kernel - 1) * dilation + 1;
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + extent).saturating_sub(len);
    (out, total / 2)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    dilation: usize,
    stride: usize,
    pad_t: usize,
    pad_l: usize,
}

impl ConvGeom {
    fn new(x: Shape, k: Shape, dilation: usize, stride: usize) -> Result<Self, GradError> {
        if x.channels != k.channels {
            return Err(GradError::ShapeMismatch {
                op: "conv2d",
                axis: Axis::Channels,
                expected: k.channels,
                found: x.channels,
            });
        }
        if x.height == 0 || x.width == 0 {
            return Err(GradError::EmptySpatial {
                op: "conv2d",
                height: x.height,
                width: x.width,
            });
        }
        if dilation == 0 || stride == 0 || k.height == 0 || k.width == 0 {
            return Err(GradError::InvalidArgument(format!(
                "conv2d: dilation ({dilation}), stride ({stride}) and kernel extent must be positive"
            )));
        }
        let (oh, pad_t) = same_padding(x.height, k.height, dilation, stride);
        let (ow, pad_l) = same_padding(x.width, k.width, dilation, stride);
        Ok(Self {
            cin: x.channels,
            cout: k.batch,
            kh: k.height,
            kw: k.width,
            h: x.height,
            w: x.width,
            oh,
            ow,
            dilation,
            stride,
            pad_t,
            pad_l,
        })
    }

    fn taps(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn rows_per_chunk(&self) -> usize {
        (CHUNK_PIXELS / self.ow).clamp(1, self.oh)
    }

    /// Input coordinate sampled by output coordinate `o` and tap `k`, if in bounds.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, dilation: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k * dilation) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    /// Fills `cols` (taps x chunk pixels) for output rows `r0..r1` of one image.
    fn im2col(&self, image: &[f32], r0: usize, r1: usize, cols: &mut [f32]) {
        let n = (r1 - r0) * self.ow;
        for c in 0..self.cin {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let q = (c * self.kh + ki) * self.kw + kj;
                    let row = &mut cols[q * n..(q + 1) * n];
                    for oy in r0..r1 {
                        let dst = &mut row[(oy - r0) * self.ow..(oy - r0 + 1) * self.ow];
                        let Some(iy) = Self::src(oy, ki, self.stride, self.dilation, self.pad_t, self.h) else {
                            dst.fill(0.0);
                            continue;
                        };
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = match Self::src(ox, kj, self.stride, self.dilation, self.pad_l, self.w) {
                                Some(ix) => src_row[ix],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto the input gradient of one image.
    fn col2im(&self, cols: &[f32], r0: usize, r1: usize, grad: &mut [f32]) {
        let n = (r1 - r0) * self.ow;
        for c in 0..self.cin {
            let plane = &mut grad[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let q = (c * self.kh + ki) * self.kw + kj;
                    let row = &cols[q * n..(q + 1) * n];
                    for oy in r0..r1 {
                        let Some(iy) = Self::src(oy, ki, self.stride, self.dilation, self.pad_t, self.h) else {
                            continue;
                        };
                        let src = &row[(oy - r0) * self.ow..(oy - r0 + 1) * self.ow];
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &g) in src.iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kj, self.stride, self.dilation, self.pad_l, self.w) {
                                dst_row[ix] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major GEMM `c = a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the strides above address only elements inside the borrowed slices;
    // callers construct them from the same dimensions used to size the buffers.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Dilated 2-D convolution with "same" zero padding.
///
/// `out[b, o, i] = sum_c sum_j x[b, c, i*stride + j*dilation - pad] * kernel[o, c, j] + bias[o]`.
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor, GradError> {
    let k = spec.kernel.shape();
    let g = ConvGeom::new(x.shape(), k, spec.dilation, spec.stride)?;
    if spec.bias.len() != g.cout {
        return Err(GradError::ShapeMismatch {
            op: "conv2d bias",
            axis: Axis::Channels,
            expected: g.cout,
            found: spec.bias.len(),
        });
    }
    let batch = x.shape().batch;
    let out_shape = Shape::new(batch, g.cout, g.oh, g.ow);
    let mut out = vec![0.0f32; out_shape.numel()];
    let taps = g.taps();
    let p_out = g.oh * g.ow;
    let in_stride = g.cin * g.h * g.w;
    let rows = g.rows_per_chunk();
    let mut cols = vec![0.0f32; taps * rows * g.ow];
    let kernel = spec.kernel.data();

    for b in 0..batch {
        let image = &x.data()[b * in_stride..(b + 1) * in_stride];
        let out_b = &mut out[b * g.cout * p_out..(b + 1) * g.cout * p_out];
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + rows).min(g.oh);
            let n = (r1 - r0) * g.ow;
            g.im2col(image, r0, r1, &mut cols[..taps * n]);
            gemm(
                g.cout,
                taps,
                n,
                kernel,
                (taps, 1),
                &cols[..taps * n],
                (n, 1),
                0.0,
                &mut out_b[r0 * g.ow..],
                (p_out, 1),
            );
            r0 = r1;
        }
        for (o, &bias) in spec.bias.iter().enumerate() {
            for v in &mut out_b[o * p_out..(o + 1) * p_out] {
                *v += bias;
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Vec<f32>,
}

pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    dilation: usize,
    stride: usize,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads, GradError> {
    let g = ConvGeom::new(x.shape(), kernel.shape(), dilation, stride)?;
    let batch = x.shape().batch;
    let taps = g.taps();
    let p_out = g.oh * g.ow;
    let in_stride = g.cin * g.h * g.w;
    let rows = g.rows_per_chunk();
    let mut cols = vec![0.0f32; taps * rows * g.ow];
    let mut dcols = if need_input_grad {
        vec![0.0f32; taps * rows * g.ow]
    } else {
        Vec::new()
    };
    let mut dkernel = vec![0.0f32; kernel.numel()];
    let mut dbias = vec![0.0f32; g.cout];
    let mut dx = if need_input_grad {
        vec![0.0f32; x.numel()]
    } else {
        Vec::new()
    };
    let gout = grad_out.data();

    for b in 0..batch {
        let image = &x.data()[b * in_stride..(b + 1) * in_stride];
        let gout_b = &gout[b * g.cout * p_out..(b + 1) * g.cout * p_out];
        for (o, db) in dbias.iter_mut().enumerate() {
            let s: f64 = gout_b[o * p_out..(o + 1) * p_out].iter().map(|&v| v as f64).sum();
            *db += s as f32;
        }
        let mut r0 = 0;
        while r0 < g.oh {
            let r1 = (r0 + rows).min(g.oh);
            let n = (r1 - r0) * g.ow;
            g.im2col(image, r0, r1, &mut cols[..taps * n]);
            // dK (cout x taps) += dOut (cout x n) * cols^T (n x taps)
            gemm(
                g.cout,
                n,
                taps,
                &gout_b[r0 * g.ow..],
                (p_out, 1),
                &cols[..taps * n],
                (1, n),
                1.0,
                &mut dkernel,
                (taps, 1),
            );
            if need_input_grad {
                // dcols (taps x n) = K^T (taps x cout) * dOut (cout x n)
                gemm(
                    taps,
                    g.cout,
                    n,
                    kernel.data(),
                    (1, taps),
                    &gout_b[r0 * g.ow..],
                    (p_out, 1),
                    0.0,
                    &mut dcols[..taps * n],
                    (n, 1),
                );
                g.col2im(&dcols[..taps * n], r0, r1, &mut dx[b * in_stride..(b + 1) * in_stride]);
            }
            r0 = r1;
        }
    }
    Ok(ConvGrads {
        input: if need_input_grad {
            Some(Tensor::from_vec(x.shape(), dx)?)
        } else {
            None
        },
        kernel: Tensor::from_vec(kernel.shape(), dkernel)?,
        bias: dbias,
    })
}

/// Learned affine parameters and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    /// Fraction of the old running statistic kept on each update.
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f32 = 0.9;
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Per-channel statistics used to normalize a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub struct BatchNormOutput {
    pub output: Tensor,
    /// Updated running statistics (unchanged in inference mode).
    pub state: BatchNormState,
    pub stats: BnStats,
}

pub fn batch_norm(x: &Tensor, st: &BatchNormState, training: bool) -> Result<BatchNormOutput, GradError> {
    let s = x.shape();
    let ch = st.channels();
    for (name, len) in [
        ("beta", st.beta.len()),
        ("running_mean", st.running_mean.len()),
        ("running_var", st.running_var.len()),
    ] {
        if len != ch {
            return Err(GradError::InvalidArgument(format!(
                "batch_norm: {name} has {len} entries, gamma has {ch}"
            )));
        }
    }
    if s.channels != ch {
        return Err(GradError::ShapeMismatch {
            op: "batch_norm",
            axis: Axis::Channels,
            expected: ch,
            found: s.channels,
        });
    }
    if s.plane() == 0 || s.batch == 0 {
        return Err(GradError::EmptySpatial {
            op: "batch_norm",
            height: s.height,
            width: s.width,
        });
    }
    let mut state = st.clone();
    let (mean, var): (Vec<f32>, Vec<f32>) = if training {
        let count = (s.batch * s.plane()) as f64;
        (0..ch)
            .map(|c| {
                let mut sum = 0.0f64;
                for b in 0..s.batch {
                    sum += x.plane(b, c).iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0f64;
                for b in 0..s.batch {
                    sq += x
                        .plane(b, c)
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                (mean as f32, (sq / count) as f32)
            })
            .unzip()
    } else {
        (st.running_mean.clone(), st.running_var.clone())
    };
    if training {
        let m = st.momentum;
        for c in 0..ch {
            state.running_mean[c] = m * st.running_mean[c] + (1.0 - m) * mean[c];
            state.running_var[c] = m * st.running_var[c] + (1.0 - m) * var[c];
        }
    }
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / ((v.max(0.0) as f64) + st.eps as f64).sqrt()) as f32)
        .collect();
    let mut out = vec![0.0f32; x.numel()];
    let p = s.plane();
    for b in 0..s.batch {
        for c in 0..ch {
            let scale = st.gamma[c] * inv_std[c];
            let shift = st.beta[c] - mean[c] * scale;
            let base = (b * ch + c) * p;
            for (o, &v) in out[base..base + p].iter_mut().zip(x.plane(b, c)) {
                *o = v * scale + shift;
            }
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::from_vec(s, out)?,
        state,
        stats: BnStats { mean, inv_std },
    })
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

pub fn batch_norm_backward(
    x: &Tensor,
    gamma: &[f32],
    stats: &BnStats,
    training: bool,
    grad_out: &Tensor,
) -> Result<BatchNormGrads, GradError> {
    let s = x.shape();
    let ch = s.channels;
    let p = s.plane();
    let count = (s.batch * p) as f64;
    let mut dx = vec![0.0f32; x.numel()];
    let mut dgamma = vec![0.0f32; ch];
    let mut dbeta = vec![0.0f32; ch];
    for c in 0..ch {
        let mean = stats.mean[c] as f64;
        let inv = stats.inv_std[c] as f64;
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..s.batch {
            for (&v, &dy) in x.plane(b, c).iter().zip(grad_out.plane(b, c)) {
                let xhat = (v as f64 - mean) * inv;
                sum_dy += dy as f64;
                sum_dy_xhat += dy as f64 * xhat;
            }
        }
        dgamma[c] = sum_dy_xhat as f32;
        dbeta[c] = sum_dy as f32;
        let g = gamma[c] as f64;
        for b in 0..s.batch {
            let base = (b * ch + c) * p;
            for ((d, &v), &dy) in dx[base..base + p]
                .iter_mut()
                .zip(x.plane(b, c))
                .zip(grad_out.plane(b, c))
            {
                *d = if training {
                    let xhat = (v as f64 - mean) * inv;
                    (g * inv * (dy as f64 - sum_dy / count - xhat * sum_dy_xhat / count)) as f32
                } else {
                    (g * inv * dy as f64) as f32
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::from_vec(s, dx)?,
        gamma: dgamma,
        beta: dbeta,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    // NaN passes through so numeric blow-ups surface in the loss
    x.map(|v| if v < 0.0 { 0.0 } else { v })
}

/// Gradient mask is taken from the forward output: 1 where `x > 0`, else 0.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("shape preserved")
}

/// Largest `f32` strictly below one.
const ONE_BELOW: f32 = 1.0 - f32::EPSILON / 2.0;
const SIGMOID_CLAMP: f32 = 80.0;

pub fn sigmoid_scalar(v: f32) -> f32 {
    let z = v.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    (1.0 / (1.0 + (-z).exp())).clamp(0.0, ONE_BELOW)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::from_vec(output.shape(), data).expect("shape preserved")
}

/// 2x2 max pooling. Also returns, per output element, the flat input index it came from.
pub fn downsample2x(x: &Tensor) -> Result<(Tensor, Vec<usize>), GradError> {
    let s = x.shape();
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(GradError::OddSpatial {
            height: s.height,
            width: s.width,
        });
    }
    let (oh, ow) = (s.height / 2, s.width / 2);
    let out_shape = Shape::new(s.batch, s.channels, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = (b * s.channels + c) * s.plane();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * s.width + 2 * ox;
                    // row-major scan; strict comparison keeps the first maximum
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * s.width + 2 * ox + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax))
}

pub fn downsample2x_backward(input_shape: Shape, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = vec![0.0f32; input_shape.numel()];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx[idx] += g;
    }
    Tensor::from_vec(input_shape, dx).expect("shape preserved")
}

/// Interpolation taps for one axis: `(lower index, upper index, upper weight)`.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, GradError> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(GradError::InvalidArgument(format!(
            "resize_bilinear: output size {out_h}x{out_w} must be at least 1x1"
        )));
    }
    if s.plane() == 0 {
        return Err(GradError::EmptySpatial {
            op: "resize_bilinear",
            height: s.height,
            width: s.width,
        });
    }
    if (out_h, out_w) == (s.height, s.width) {
        return Ok(x.clone());
    }
    let ty = bilinear_taps(s.height, out_h);
    let tx = bilinear_taps(s.width, out_w);
    let out_shape = Shape::new(s.batch, s.channels, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = x.plane(b, c);
            for &(y0, y1, wy) in &ty {
                let r0 = &plane[y0 * s.width..(y0 + 1) * s.width];
                let r1 = &plane[y1 * s.width..(y1 + 1) * s.width];
                for &(x0, x1, wx) in &tx {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * wx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * wx;
                    out.push(top + (bot - top) * wy);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn resize_bilinear_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let g = grad_out.shape();
    if (g.height, g.width) == (s.height, s.width) {
        return grad_out.clone();
    }
    let ty = bilinear_taps(s.height, g.height);
    let tx = bilinear_taps(s.width, g.width);
    let mut dx = vec![0.0f32; s.numel()];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = (b * s.channels + c) * s.plane();
            let gp = grad_out.plane(b, c);
            let mut k = 0;
            for &(y0, y1, wy) in &ty {
                for &(x0, x1, wx) in &tx {
                    let v = gp[k];
                    k += 1;
                    dx[base + y0 * s.width + x0] += v * (1.0 - wy) * (1.0 - wx);
                    dx[base + y0 * s.width + x1] += v * (1.0 - wy) * wx;
                    dx[base + y1 * s.width + x0] += v * wy * (1.0 - wx);
                    dx[base + y1 * s.width + x1] += v * wy * wx;
                }
            }
        }
    }
    Tensor::from_vec(s, dx).expect("shape preserved")
}

pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor, GradError> {
    if let Some(axis) = x.shape().first_mismatch(&y.shape()) {
        return Err(GradError::ShapeMismatch {
            op: "add",
            axis,
            expected: x.shape().dim(axis),
            found: y.shape().dim(axis),
        });
    }
    let data = x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Concatenates along the channel axis, in argument order.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor, GradError> {
    let first = xs
        .first()
        .ok_or_else(|| GradError::InvalidArgument("concat_channels: no inputs".into()))?
        .shape();
    for t in xs {
        let s = t.shape();
        for axis in [Axis::Batch, Axis::Height, Axis::Width] {
            if s.dim(axis) != first.dim(axis) {
                return Err(GradError::ShapeMismatch {
                    op: "concat_channels",
                    axis,
                    expected: first.dim(axis),
                    found: s.dim(axis),
                });
            }
        }
    }
    let channels = xs.iter().map(|t| t.shape().channels).sum();
    let out_shape = Shape::new(first.batch, channels, first.height, first.width);
    let mut data = Vec::with_capacity(out_shape.numel());
    for b in 0..first.batch {
        for t in xs {
            let n = t.shape().channels * first.plane();
            data.extend_from_slice(&t.data()[b * n..(b + 1) * n]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), data: &[f32]) -> Tensor {
        Tensor::from_vec(Shape::new(shape.0, shape.1, shape.2, shape.3), data.to_vec()).unwrap()
    }

    #[test]
    fn dilated_conv_center_tap() {
        let x = t((1, 1, 1, 5), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let spec = ConvSpec::new(t((1, 1, 1, 3), &[1.0, 1.0, 1.0]), vec![0.0], 2);
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), &[4.0, 6.0, 9.0, 6.0, 8.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_fn(Shape::new(2, 1, 4, 3), |[b, _, y, x]| (b * 100 + y * 10 + x) as f32);
        let spec = ConvSpec::new(t((1, 1, 1, 1), &[1.0]), vec![0.0], 1);
        assert_eq!(conv2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn conv_preserves_shape_for_all_rates() {
        let x = Tensor::full(Shape::new(1, 2, 9, 7), 1.0);
        for rate in [1, 2, 4, 6, 12, 18] {
            let spec = ConvSpec::new(Tensor::full(Shape::new(3, 2, 3, 3), 0.1), vec![0.0; 3], rate);
            let y = conv2d(&x, &spec).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 3, 9, 7), "rate {rate}");
            assert!(y.is_finite());
        }
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let spec = ConvSpec::new(Tensor::zeros(Shape::new(1, 3, 3, 3)), vec![0.0], 1);
        match conv2d(&x, &spec) {
            Err(GradError::ShapeMismatch { axis, expected, found, .. }) => {
                assert_eq!((axis, expected, found), (Axis::Channels, 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strided_conv_halves_output() {
        let x = Tensor::full(Shape::new(1, 1, 8, 6), 1.0);
        let spec = ConvSpec {
            stride: 2,
            ..ConvSpec::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), vec![0.0], 1)
        };
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 3));
    }

    #[test]
    fn batch_norm_constant_input_gives_beta() {
        let x = Tensor::full(Shape::new(2, 1, 3, 3), 7.0);
        let mut st = BatchNormState::new(1);
        st.beta = vec![0.5];
        let out = batch_norm(&x, &st, true).unwrap();
        assert!(out.output.data().iter().all(|&v| v == 0.5));
        // running stats moved towards the batch statistics
        assert!((out.state.running_mean[0] - 0.7).abs() < 1e-6);
        assert!((out.state.running_var[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn batch_norm_standardized_input_unchanged() {
        let vals = [-1.0f32, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0];
        let x = t((1, 2, 2, 2), &vals);
        let out = batch_norm(&x, &BatchNormState::new(2), true).unwrap();
        for (a, b) in out.output.data().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn batch_norm_rejects_empty_spatial() {
        let x = Tensor::zeros(Shape::new(1, 1, 0, 4));
        assert!(matches!(
            batch_norm(&x, &BatchNormState::new(1), true),
            Err(GradError::EmptySpatial { .. })
        ));
    }

    #[test]
    fn relu_examples() {
        let y = relu(&t((1, 1, 1, 3), &[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(Shape::new(1, 2, 2, 2), -3.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        // gradient defined as zero at exactly zero
        let g = relu_backward(&y, &Tensor::full(y.shape(), 1.0));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for x in [-7.5f32, -2.0, -0.3, 0.1, 1.0, 4.0, 9.0] {
            assert!((sigmoid_scalar(-x) - (1.0 - sigmoid_scalar(x))).abs() < 1e-6);
        }
        let s = sigmoid_scalar(100.0);
        assert!((s - 1.0).abs() < 1e-6 && s < 1.0);
        let s = sigmoid_scalar(-1000.0);
        assert!(s > 0.0 && s.is_finite());
    }

    #[test]
    fn maxpool_examples() {
        let (y, arg) = downsample2x(&t((1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let c = Tensor::full(Shape::new(1, 2, 4, 6), 2.5);
        let (y, arg) = downsample2x(&c).unwrap();
        assert_eq!(y, Tensor::full(Shape::new(1, 2, 2, 3), 2.5));
        // ties pick the first element of each window in row-major order
        assert_eq!(arg[0], 0);
        assert!(matches!(
            downsample2x(&Tensor::zeros(Shape::new(1, 1, 3, 4))),
            Err(GradError::OddSpatial { height: 3, width: 4 })
        ));
    }

    #[test]
    fn resize_examples() {
        let x = t((1, 1, 2, 2), &[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(resize_bilinear(&x, 1, 1).unwrap().data(), &[3.0]);
        let r = Tensor::from_fn(Shape::new(1, 2, 5, 3), |[_, c, y, x]| (c + y * x) as f32 * 0.37);
        assert_eq!(resize_bilinear(&r, 5, 3).unwrap(), r);
        assert!(resize_bilinear(&r, 0, 3).is_err());
    }

    #[test]
    fn add_and_concat() {
        let x = Tensor::from_fn(Shape::new(1, 2, 2, 2), |[_, c, y, x]| (c * 4 + y * 2 + x) as f32);
        assert_eq!(add(&x, &Tensor::zeros(x.shape())).unwrap(), x);
        let neg = x.map(|v| -v);
        assert!(add(&x, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(add(&x, &Tensor::zeros(Shape::new(1, 1, 2, 2))).is_err());

        assert_eq!(concat_channels(&[&x]).unwrap(), x);
        let y = Tensor::full(Shape::new(1, 3, 2, 2), 9.0);
        let cat = concat_channels(&[&x, &y]).unwrap();
        assert_eq!(cat.shape().channels, 5);
        assert_eq!(cat.slice_channels(0, 2).unwrap(), x);
        assert_eq!(cat.slice_channels(2, 3).unwrap(), y);
        assert!(concat_channels(&[&x, &Tensor::zeros(Shape::new(1, 1, 3, 2))]).is_err());
    }

    #[test]
    fn same_padding_matches_effective_extent() {
        assert_eq!(same_padding(10, 3, 1, 1), (10, 1));
        assert_eq!(same_padding(10, 3, 18, 1), (10, 18));
        assert_eq!(same_padding(5, 1, 4, 1), (5, 0));
        assert_eq!(same_padding(7, 3, 1, 2), (4, 1));
    }
}
