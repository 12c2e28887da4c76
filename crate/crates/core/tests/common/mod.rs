#![allow(dead_code)]

pub mod gradsuite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vesseg::gradcore::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values kept at least `gap` away from zero.
pub fn uniform_off_zero(rng: &mut ChaCha8Rng, shape: Shape, hi: f32, gap: f32) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(gap..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Central finite differences of `f` at the listed flat coordinates of `x`.
pub fn central_diff(x: &Tensor, coords: &[usize], h: f32, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            // use the perturbation actually representable in f32
            let step = plus.data()[i] as f64 - minus.data()[i] as f64;
            (f(&plus) - f(&minus)) / step
        })
        .collect()
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn pick(t: &Tensor, coords: &[usize]) -> Vec<f64> {
    coords.iter().map(|&i| t.data()[i] as f64).collect()
}

pub fn all_coords(t: &Tensor) -> Vec<usize> {
    (0..t.numel()).collect()
}

/// `count` distinct coordinates sampled without replacement (all of them if fewer).
pub fn sample_coords(rng: &mut ChaCha8Rng, t: &Tensor, count: usize) -> Vec<usize> {
    let mut all = all_coords(t);
    if all.len() <= count {
        return all;
    }
    for i in 0..count {
        let j = rng.gen_range(i..all.len());
        all.swap(i, j);
    }
    all.truncate(count);
    all.sort_unstable();
    all
}

/// Worst norm-wise relative error, over every input, between tape gradients
/// and central differences of the scalar produced by `build`.
pub fn op_grad_error(
    inputs: &[Tensor],
    h: f32,
    build: impl Fn(&mut vesseg::gradcore::Tape, &[vesseg::gradcore::Var]) -> vesseg::gradcore::Var,
) -> f64 {
    use vesseg::gradcore::Tape;
    let eval = |ts: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<_> = ts.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.scalar(loss)
    };
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    let mut worst = 0.0f64;
    for (i, (input, &v)) in inputs.iter().zip(&vars).enumerate() {
        let coords = all_coords(input);
        let analytic = pick(&grads.wrt(v), &coords);
        let numeric = central_diff(input, &coords, h, |perturbed| {
            let mut ts = inputs.to_vec();
            ts[i] = perturbed.clone();
            eval(&ts)
        });
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// `sum(out^2) / 2`, the reduction used by the per-op checks.
pub fn half_sum_squares(tape: &mut vesseg::gradcore::Tape, out: vesseg::gradcore::Var) -> vesseg::gradcore::Var {
    let s = tape.sum_squares(out);
    tape.scale(s, 0.5)
}

/// Central differences that skip coordinates whose `±h` perturbation moves the
/// function onto a different linear piece (a ReLU or max-pool switch), where
/// finite differences do not estimate the derivative. `f` returns the value and
/// the region fingerprint. Returns `(coordinate, derivative)` pairs that were kept.
pub fn smooth_central_diff(
    x: &Tensor,
    coords: &[usize],
    h: f32,
    f: impl Fn(&Tensor) -> (f64, Vec<usize>),
) -> Vec<(usize, f64)> {
    let (_, base) = f(x);
    coords
        .iter()
        .filter_map(|&i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let step = plus.data()[i] as f64 - minus.data()[i] as f64;
            let (fp, rp) = f(&plus);
            let (fm, rm) = f(&minus);
            (rp == base && rm == base).then(|| (i, (fp - fm) / step))
        })
        .collect()
}

/// Random blob mask: a union of discs and thick random-walk strokes.
pub fn blob_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> vesseg::mask::BinaryMask {
    let mut m = vesseg::mask::BinaryMask::new(w, h);
    let paint = |m: &mut vesseg::mask::BinaryMask, cx: f64, cy: f64, r: f64| {
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    m.set(x, y, true);
                }
            }
        }
    };
    for _ in 0..rng.gen_range(1..4) {
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        paint(&mut m, cx, cy, rng.gen_range(1.0..8.0));
    }
    for _ in 0..rng.gen_range(0..3) {
        let (mut x, mut y) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let r = rng.gen_range(0.5..3.0);
        let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for _ in 0..rng.gen_range(5..40) {
            paint(&mut m, x, y, r);
            angle += rng.gen_range(-0.5..0.5);
            x += angle.cos();
            y += angle.sin();
        }
    }
    m
}

/// Independent 8-connected component count by union-find.
pub fn union_find_components(m: &vesseg::mask::BinaryMask) -> usize {
    let (w, h) = m.dims();
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            for (dx, dy) in [(1isize, 0isize), (-1, 1), (0, 1), (1, 1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if m.get_or_false(nx, ny) {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny as usize * w + nx as usize);
                    parent[a] = b;
                }
            }
        }
    }
    (0..w * h).filter(|&i| m.data()[i] && find(&mut parent, i) == i).count()
}

/// Squared distance to the nearest site by scanning every site.
pub fn brute_force_squared_edt(sites: &vesseg::mask::BinaryMask) -> Vec<u64> {
    let (w, h) = sites.dims();
    let pts: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| sites.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x as i64, y as i64)))
        .map(|(x, y)| {
            pts.iter()
                .map(|&(sx, sy)| ((x - sx).pow(2) + (y - sy).pow(2)) as u64)
                .min()
                .unwrap_or(u64::MAX)
        })
        .collect()
}

/// Horizontal bar of thickness `t` spanning columns 4..w-4, centred vertically.
pub fn bar_mask(w: usize, h: usize, t: usize) -> vesseg::mask::BinaryMask {
    let top = (h - t) / 2;
    vesseg::mask::BinaryMask::from_fn(w, h, |x, y| (4..w - 4).contains(&x) && (top..top + t).contains(&y))
}

/// Small network after two optimizer steps, so moments and running statistics are populated.
pub fn trained_checkpoint(seed: u64) -> vesseg::dataio::Checkpoint {
    use vesseg::gradcore::{AdamConfig, AdamState};
    use vesseg::vesselnet::{train, DiceLossConfig, NetworkConfig, Sample, TrainHyper, VesselNet};
    let mut net = VesselNet::new(NetworkConfig::desk(16, [2, 3, 4, 4]), seed).unwrap();
    let mut r = rng(seed);
    let data: Vec<Sample> = (0..2)
        .map(|_| Sample {
            image: uniform(&mut r, Shape::new(1, 1, 16, 16), 0.0, 1.0),
            mask: vesseg::mask::BinaryMask::from_fn(16, 16, |_, _| r.gen_bool(0.2)),
        })
        .collect();
    let mut adam = AdamState::new(AdamConfig::default());
    let hyper = TrainHyper {
        epochs: 2,
        ..TrainHyper::default()
    };
    train(&mut net, &data, &hyper, &DiceLossConfig::default(), &mut adam, |_, _| {}).unwrap();
    vesseg::dataio::Checkpoint::new(&net, Some(&adam))
}

/// Byte ranges `(name_start, payload_end)` of each entry, walked from the wire layout.
pub fn entry_spans(bytes: &[u8]) -> Vec<(String, usize, usize)> {
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
    let count = u32_at(8) as usize;
    let mut pos = 12;
    let mut spans = Vec::new();
    for _ in 0..count {
        let start = pos;
        let len = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        let name = String::from_utf8(bytes[pos + 2..pos + 2 + len].to_vec()).unwrap();
        pos += 2 + len;
        let dtype = bytes[pos];
        let rank = bytes[pos + 1] as usize;
        pos += 2;
        let numel: usize = (0..rank).map(|k| u32_at(pos + 4 * k) as usize).product();
        pos += 4 * rank;
        pos += if dtype == 0 { 4 * numel } else { numel };
        spans.push((name, start, pos));
    }
    spans
}

/// Per-pixel tally written directly from the definitions.
pub fn direct_counts(
    pred: &vesseg::mask::BinaryMask,
    gt: &vesseg::mask::BinaryMask,
    fov: Option<&vesseg::mask::BinaryMask>,
) -> [u64; 4] {
    let mut c = [0u64; 4];
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if let Some(f) = fov {
                if !f.get(x, y) {
                    continue;
                }
            }
            let idx = match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => 0,
                (false, false) => 1,
                (true, false) => 2,
                (false, true) => 3,
            };
            c[idx] += 1;
        }
    }
    c
}
