use std::collections::BTreeMap;

use super::ops::{self, BatchNormState, BnStats, ConvSpec};
use super::{GradError, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operator defined outside this module, with a hand-written backward pass.
pub trait CustomOp {
    /// Returns one gradient per input (or `None` when the input gets no gradient).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

enum Node {
    Leaf,
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        training: bool,
        stats: BnStats,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Resize(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    Sum(Var),
    SumSquares(Var),
    Scale(Var, f32),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

/// Records a forward computation so gradients can be replayed in reverse.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
    requires_grad: Vec<bool>,
    /// 64-bit shadow of scalar reductions, so loss values keep full precision.
    scalars: Vec<Option<f64>>,
    params: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, node: Node, requires_grad: bool, scalar: Option<f64>) -> Var {
        self.values.push(value);
        self.nodes.push(node);
        self.requires_grad.push(requires_grad);
        self.scalars.push(scalar);
        Var(self.values.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// A constant input. No gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Node::Leaf, false, None)
    }

    /// An unnamed leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Node::Leaf, true, None)
    }

    /// A named learnable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Node::Leaf, true, None);
        self.params.push((name.into(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Scalar value in 64-bit precision where available.
    pub fn scalar(&self, v: Var) -> f64 {
        self.scalars[v.0].unwrap_or_else(|| self.values[v.0].data()[0] as f64)
    }

    /// Identifies the linear piece of the recorded function: which ReLU inputs
    /// were positive and which element won each max-pool window. Two tapes
    /// of the same graph with equal regions differ only by smooth ops.
    pub fn linear_region(&self) -> Vec<usize> {
        let mut region = Vec::new();
        for node in &self.nodes {
            match node {
                Node::Relu(x) => region.extend(self.value(*x).data().iter().map(|&v| (v > 0.0) as usize)),
                Node::MaxPool { argmax, .. } => region.extend_from_slice(argmax),
                _ => {}
            }
        }
        region
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var, GradError> {
        self.conv2d_strided(x, kernel, bias, dilation, 1)
    }

    pub fn conv2d_strided(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        stride: usize,
    ) -> Result<Var, GradError> {
        let spec = ConvSpec {
            kernel: self.value(kernel).clone(),
            bias: self.value(bias).data().to_vec(),
            dilation,
            stride,
        };
        let out = ops::conv2d(self.value(x), &spec)?;
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            out,
            Node::Conv {
                x,
                kernel,
                bias,
                dilation,
                stride,
            },
            rg,
            None,
        ))
    }

    /// Batch norm whose `gamma`/`beta` are tape values. Running statistics come
    /// from `state`; the updated statistics are returned alongside the output.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState,
        training: bool,
    ) -> Result<(Var, BatchNormState), GradError> {
        let mut st = state.clone();
        st.gamma = self.value(gamma).data().to_vec();
        st.beta = self.value(beta).data().to_vec();
        let out = ops::batch_norm(self.value(x), &st, training)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            out.output,
            Node::BatchNorm {
                x,
                gamma,
                beta,
                training,
                stats: out.stats,
            },
            rg,
            None,
        );
        Ok((v, out.state))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(out, Node::Relu(x), rg, None)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(out, Node::Sigmoid(x), rg, None)
    }

    pub fn downsample2x(&mut self, x: Var) -> Result<Var, GradError> {
        let (out, argmax) = ops::downsample2x(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Node::MaxPool { x, argmax }, rg, None))
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, GradError> {
        let out = ops::resize_bilinear(self.value(x), out_h, out_w)?;
        let rg = self.rg(x);
        Ok(self.push(out, Node::Resize(x), rg, None))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        let scalar = match (self.scalars[a.0], self.scalars[b.0]) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        Ok(self.push(out, Node::Add(a, b), rg, scalar))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, GradError> {
        let tensors: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&tensors)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Node::Concat(xs.to_vec()), rg, None))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s as f32), Node::Sum(x), rg, Some(s))
    }

    /// Sum of squared elements, as a scalar.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s as f32), Node::SumSquares(x), rg, Some(s))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let kf = k as f32;
        let out = self.value(x).map(|v| v * kf);
        let rg = self.rg(x);
        let scalar = self.scalars[x.0].map(|s| s * k);
        self.push(out, Node::Scale(x, kf), rg, scalar)
    }

    /// Records a custom operator whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor,
        scalar: Option<f64>,
        op: Box<dyn CustomOp>,
    ) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            output,
            Node::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
            scalar,
        )
    }

    /// Replays the tape in reverse from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(GradError::NonScalarLoss(loss_value.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let node = &self.nodes[i];
            if matches!(node, Node::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            match node {
                Node::Leaf => unreachable!(),
                Node::Conv {
                    x,
                    kernel,
                    bias,
                    dilation,
                    stride,
                } => {
                    let r = ops::conv2d_backward(
                        self.value(*x),
                        self.value(*kernel),
                        *dilation,
                        *stride,
                        &g,
                        self.rg(*x),
                    )?;
                    if let Some(dx) = r.input {
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.rg(*kernel) {
                        accumulate(&mut grads, *kernel, r.kernel);
                    }
                    if self.rg(*bias) {
                        let shape = self.value(*bias).shape();
                        accumulate(&mut grads, *bias, Tensor::from_vec(shape, r.bias)?);
                    }
                }
                Node::BatchNorm {
                    x,
                    gamma,
                    beta,
                    training,
                    stats,
                } => {
                    let r = ops::batch_norm_backward(
                        self.value(*x),
                        self.value(*gamma).data(),
                        stats,
                        *training,
                        &g,
                    )?;
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, r.input);
                    }
                    if self.rg(*gamma) {
                        let shape = self.value(*gamma).shape();
                        accumulate(&mut grads, *gamma, Tensor::from_vec(shape, r.gamma)?);
                    }
                    if self.rg(*beta) {
                        let shape = self.value(*beta).shape();
                        accumulate(&mut grads, *beta, Tensor::from_vec(shape, r.beta)?);
                    }
                }
                Node::Relu(x) => {
                    let dx = ops::relu_backward(&self.values[i], &g);
                    accumulate(&mut grads, *x, dx);
                }
                Node::Sigmoid(x) => {
                    let dx = ops::sigmoid_backward(&self.values[i], &g);
                    accumulate(&mut grads, *x, dx);
                }
                Node::MaxPool { x, argmax } => {
                    let dx = ops::downsample2x_backward(self.value(*x).shape(), argmax, &g);
                    accumulate(&mut grads, *x, dx);
                }
                Node::Resize(x) => {
                    let dx = ops::resize_bilinear_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads, *x, dx);
                }
                Node::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Node::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let c = self.value(x).shape().channels;
                        if self.rg(x) {
                            accumulate(&mut grads, x, g.slice_channels(offset, c)?);
                        }
                        offset += c;
                    }
                }
                Node::Sum(x) => {
                    let shape = self.value(*x).shape();
                    accumulate(&mut grads, *x, Tensor::full(shape, g.data()[0]));
                }
                Node::SumSquares(x) => {
                    let k = 2.0 * g.data()[0];
                    accumulate(&mut grads, *x, self.value(*x).map(|v| k * v));
                }
                Node::Scale(x, k) => {
                    accumulate(&mut grads, *x, g.map(|v| v * k));
                }
                Node::Custom { inputs, op } => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let gs = op.backward(&ins, &self.values[i], &g);
                    for (&v, dg) in inputs.iter().zip(gs) {
                        if let (true, Some(dg)) = (self.rg(v), dg) {
                            accumulate(&mut grads, v, dg);
                        }
                    }
                }
            }
        }

        Ok(Gradients {
            shapes: self.values.iter().map(Tensor::shape).collect(),
            grads,
            params: self.params.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: gradients of the loss for every leaf.
pub struct Gradients {
    shapes: Vec<Shape>,
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }

    /// Gradients of every named parameter, keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, v)| (name.clone(), self.wrt(*v)))
            .collect()
    }
}
