//! Finite-difference checks shared by the gradient tests and the acceptance run.

use std::collections::BTreeMap;

use super::*;
use vesseg::gradcore::{BatchNormState, CustomOp, ModelParams, Shape, Tape, Tensor, Var};
use vesseg::mask::BinaryMask;
use vesseg::vesselnet::{dice_loss, record_loss, DiceLossConfig, NetworkConfig, VesselNet};

pub const H: f32 = 1e-3;

pub struct OpCheck {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn() -> f64,
}

/// Every differentiable tape operator with its tolerance.
pub fn op_checks() -> Vec<OpCheck> {
    vec![
        OpCheck { name: "conv2d (dilation 2)", tol: 1e-3, run: conv2d_dilated },
        OpCheck { name: "conv2d (stride 2, 1x3 kernel)", tol: 1e-3, run: conv2d_strided },
        OpCheck { name: "batch_norm (training)", tol: 1e-3, run: batch_norm_training },
        OpCheck { name: "batch_norm (inference)", tol: 1e-3, run: batch_norm_inference },
        OpCheck { name: "relu (away from 0)", tol: 1e-4, run: relu },
        OpCheck { name: "sigmoid", tol: 1e-3, run: sigmoid },
        OpCheck { name: "downsample2x", tol: 1e-3, run: downsample },
        OpCheck { name: "resize_bilinear", tol: 1e-3, run: resize },
        OpCheck { name: "add", tol: 1e-3, run: add },
        OpCheck { name: "concat_channels", tol: 1e-3, run: concat },
        OpCheck { name: "sum, sum_squares, scale", tol: 1e-3, run: reductions },
    ]
}

fn conv2d_dilated() -> f64 {
    let mut r = rng(11);
    let x = uniform(&mut r, Shape::new(2, 3, 8, 8), -1.0, 1.0);
    let k = uniform(&mut r, Shape::new(4, 3, 3, 3), -0.5, 0.5);
    let b = uniform(&mut r, Shape::new(1, 4, 1, 1), -0.1, 0.1);
    op_grad_error(&[x, k, b], H, |tape, v| {
        let y = tape.conv2d(v[0], v[1], v[2], 2).unwrap();
        half_sum_squares(tape, y)
    })
}

fn conv2d_strided() -> f64 {
    let mut r = rng(12);
    let x = uniform(&mut r, Shape::new(1, 2, 7, 9), -1.0, 1.0);
    let k = uniform(&mut r, Shape::new(3, 2, 1, 3), -0.5, 0.5);
    let b = uniform(&mut r, Shape::new(1, 3, 1, 1), -0.1, 0.1);
    op_grad_error(&[x, k, b], H, |tape, v| {
        let y = tape.conv2d_strided(v[0], v[1], v[2], 3, 2).unwrap();
        half_sum_squares(tape, y)
    })
}

fn bn_inputs(seed: u64) -> [Tensor; 4] {
    let mut r = rng(seed);
    [
        uniform(&mut r, Shape::new(2, 3, 4, 5), -2.0, 2.0),
        uniform(&mut r, Shape::new(1, 3, 1, 1), 0.5, 1.5),
        uniform(&mut r, Shape::new(1, 3, 1, 1), -0.5, 0.5),
        // fixed projection so the reduction is not invariant to normalization
        uniform(&mut r, Shape::new(2, 3, 4, 5), -1.0, 1.0),
    ]
}

fn batch_norm_training() -> f64 {
    let [x, g, b, w] = bn_inputs(13);
    op_grad_error(&[x, g, b], H, |tape, v| {
        let (y, _) = tape.batch_norm(v[0], v[1], v[2], &BatchNormState::new(3), true).unwrap();
        let wv = tape.constant(w.clone());
        let prod = ProductOp::record(tape, y, wv);
        tape.sum(prod)
    })
}

fn batch_norm_inference() -> f64 {
    let [x, g, b, _] = bn_inputs(14);
    let mut st = BatchNormState::new(3);
    st.running_mean = vec![0.2, -0.1, 0.0];
    st.running_var = vec![1.5, 0.7, 2.0];
    op_grad_error(&[x, g, b], H, |tape, v| {
        let (y, _) = tape.batch_norm(v[0], v[1], v[2], &st, false).unwrap();
        half_sum_squares(tape, y)
    })
}

/// Elementwise product, recorded as a custom op (not part of the network op set).
struct ProductOp;

impl ProductOp {
    fn record(tape: &mut Tape, a: Var, b: Var) -> Var {
        let data = tape
            .value(a)
            .data()
            .iter()
            .zip(tape.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(tape.value(a).shape(), data).unwrap();
        tape.custom(&[a, b], out, None, Box::new(ProductOp))
    }
}

impl CustomOp for ProductOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let mul = |t: &Tensor| {
            let d = t.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
            Tensor::from_vec(t.shape(), d).unwrap()
        };
        vec![Some(mul(inputs[1])), Some(mul(inputs[0]))]
    }
}

fn relu() -> f64 {
    let mut r = rng(15);
    let x = uniform_off_zero(&mut r, Shape::new(2, 2, 5, 5), 2.0, 0.05);
    op_grad_error(&[x], H, |tape, v| {
        let y = tape.relu(v[0]);
        half_sum_squares(tape, y)
    })
}

fn sigmoid() -> f64 {
    let mut r = rng(16);
    let x = uniform(&mut r, Shape::new(1, 3, 4, 4), -4.0, 4.0);
    op_grad_error(&[x], H, |tape, v| {
        let y = tape.sigmoid(v[0]);
        half_sum_squares(tape, y)
    })
}

fn downsample() -> f64 {
    let mut r = rng(17);
    let x = uniform(&mut r, Shape::new(2, 2, 6, 8), -1.0, 1.0);
    op_grad_error(&[x], H, |tape, v| {
        let y = tape.downsample2x(v[0]).unwrap();
        let s = tape.sum(y);
        let q = half_sum_squares(tape, y);
        tape.add(s, q).unwrap()
    })
}

fn resize() -> f64 {
    let mut r = rng(18);
    let mut worst = 0.0f64;
    for (inp, out) in [((5, 7), (10, 14)), ((8, 6), (3, 5)), ((4, 4), (1, 1)), ((3, 5), (7, 2))] {
        let x = uniform(&mut r, Shape::new(1, 2, inp.0, inp.1), -1.0, 1.0);
        worst = worst.max(op_grad_error(&[x], H, |tape, v| {
            let y = tape.resize_bilinear(v[0], out.0, out.1).unwrap();
            half_sum_squares(tape, y)
        }));
    }
    worst
}

fn add() -> f64 {
    let mut r = rng(19);
    let a = uniform(&mut r, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let b = uniform(&mut r, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    op_grad_error(&[a, b], H, |tape, v| {
        let y = tape.add(v[0], v[1]).unwrap();
        half_sum_squares(tape, y)
    })
}

fn concat() -> f64 {
    let mut r = rng(19);
    let a = uniform(&mut r, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let b = uniform(&mut r, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let c = uniform(&mut r, Shape::new(1, 3, 3, 3), -1.0, 1.0);
    op_grad_error(&[a, c, b], H, |tape, v| {
        let y = tape.concat_channels(v).unwrap();
        half_sum_squares(tape, y)
    })
}

fn reductions() -> f64 {
    let mut r = rng(20);
    let x = uniform(&mut r, Shape::new(1, 2, 4, 3), -3.0, 3.0);
    op_grad_error(&[x], H, |tape, v| {
        let s = tape.sum(v[0]);
        let q = tape.sum_squares(v[0]);
        let q = tape.scale(q, -0.3);
        tape.add(s, q).unwrap()
    })
}

pub struct NetworkCheck {
    pub rel_err: f64,
    pub per_tensor: BTreeMap<String, f64>,
    pub kept: usize,
    pub skipped: usize,
    /// Tape loss minus the directly computed loss.
    pub loss_mismatch: f64,
}

/// Parameter gradients of the full multiscale loss on a 1x1x32x32 input,
/// three sampled coordinates per parameter tensor.
pub fn network_check() -> NetworkCheck {
    let cfg = NetworkConfig::desk(32, [3, 4, 4, 4]);
    let net = VesselNet::new(cfg, 21).unwrap();
    let img = uniform(&mut rng(22), Shape::new(1, 1, 32, 32), 0.0, 1.0);
    let gt = BinaryMask::from_fn(32, 32, |x, y| (x + 2 * y) % 7 < 2).to_tensor();
    let loss_cfg = DiceLossConfig::default();

    let record = |params: &ModelParams| {
        let n = VesselNet::from_params(net.config.clone(), params.clone()).unwrap();
        let mut tape = Tape::new();
        let input = tape.constant(img.clone());
        let fwd = n.forward_on_tape(&mut tape, input, true).unwrap();
        let kernels: Vec<_> = fwd
            .param_vars
            .iter()
            .filter(|(k, _)| k.ends_with(".kernel"))
            .map(|(_, &v)| v)
            .collect();
        let loss = record_loss(&mut tape, &fwd.maps, &gt, &loss_cfg, &kernels).unwrap();
        (tape, loss)
    };
    let eval = |params: &ModelParams| -> (f64, Vec<usize>) {
        let (tape, loss) = record(params);
        (tape.scalar(loss), tape.linear_region())
    };

    let (tape, loss) = record(&net.params);
    let out = net.forward(&img, true).unwrap();
    let direct = dice_loss(&out.predictions, &gt, &loss_cfg, &net.params).unwrap();
    let grads = tape.backward(loss).unwrap().params();

    let mut r = rng(23);
    let mut per_tensor = BTreeMap::new();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for (name, t) in &net.params.tensors {
        let coords = sample_coords(&mut r, t, 3);
        let kept = smooth_central_diff(t, &coords, H, |perturbed| {
            let mut p = net.params.clone();
            p.tensors.insert(name.clone(), perturbed.clone());
            eval(&p)
        });
        skipped += coords.len() - kept.len();
        let a: Vec<f64> = kept.iter().map(|&(i, _)| grads[name].data()[i] as f64).collect();
        let n: Vec<f64> = kept.iter().map(|&(_, d)| d).collect();
        per_tensor.insert(name.clone(), rel_err(&a, &n));
        analytic.extend(a);
        numeric.extend(n);
    }
    NetworkCheck {
        rel_err: rel_err(&analytic, &numeric),
        per_tensor,
        kept: analytic.len(),
        skipped,
        loss_mismatch: tape.scalar(loss) - direct,
    }
}
