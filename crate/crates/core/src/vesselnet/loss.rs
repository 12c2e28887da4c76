use super::{DiceLossConfig, NetError};
use crate::gradcore::{CustomOp, ModelParams, Shape, Tape, Tensor, Var};
use crate::mask::BinaryMask;

/// The four full-resolution probability maps, scale `m = 1` first.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    maps: Vec<Tensor>,
}

impl PredictionSet {
    pub const SCALES: usize = 4;

    pub fn new(maps: Vec<Tensor>) -> Result<Self, NetError> {
        if maps.len() != Self::SCALES {
            return Err(NetError::Predictions(format!(
                "expected {} maps, got {}",
                Self::SCALES,
                maps.len()
            )));
        }
        let shape = maps[0].shape();
        if shape.channels != 1 || maps.iter().any(|m| m.shape() != shape) {
            return Err(NetError::Predictions(
                "prediction maps must share one (batch, 1, H, W) shape".into(),
            ));
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    /// Map for scale `m` (1-based).
    pub fn scale(&self, m: usize) -> &Tensor {
        &self.maps[m - 1]
    }

    pub fn shape(&self) -> Shape {
        self.maps[0].shape()
    }

    /// The scale-1 map of one batch item, as a row-major plane.
    pub fn primary_plane(&self, batch: usize) -> &[f32] {
        self.maps[0].plane(batch, 0)
    }
}

/// Checks `gt` is `(batch, 1, H, W)`, matches the maps, and holds only 0 and 1.
fn validate_gt(gt: &Tensor, shape: Shape) -> Result<(), NetError> {
    if gt.shape() != shape {
        return Err(NetError::GroundTruth(format!(
            "ground truth shape {} does not match prediction shape {shape}",
            gt.shape()
        )));
    }
    if let Some((i, v)) = gt.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(NetError::GroundTruth(format!(
            "ground truth value {v} at index {i} is not 0 or 1"
        )));
    }
    Ok(())
}

/// Per-image sums `(sum G*P, sum G, sum P)` for one map.
fn overlap_sums(gt: &[f32], pred: &[f32]) -> (f64, f64, f64) {
    let mut inter = 0.0f64;
    let mut sg = 0.0f64;
    let mut sp = 0.0f64;
    for (&g, &p) in gt.iter().zip(pred) {
        inter += g as f64 * p as f64;
        sg += g as f64;
        sp += p as f64;
    }
    (inter, sg, sp)
}

/// `1 - (2 sum GP + eps) / (sum G + sum P + eps)`.
pub fn soft_dice_term(gt: &[f32], pred: &[f32], eps: f64) -> f64 {
    let (inter, sg, sp) = overlap_sums(gt, pred);
    1.0 - (2.0 * inter + eps) / (sg + sp + eps)
}

/// Multiscale soft Dice data term, averaged over the batch.
///
/// Each image contributes the sum over scales of its soft Dice loss, so the
/// result lies in `[0, 4]`.
pub fn dice_data_term(maps: &[&Tensor], gt: &Tensor, eps: f64) -> Result<f64, NetError> {
    let shape = gt.shape();
    for m in maps {
        validate_gt(gt, m.shape())?;
    }
    let mut total = 0.0;
    for b in 0..shape.batch {
        for m in maps {
            total += soft_dice_term(gt.plane(b, 0), m.plane(b, 0), eps);
        }
    }
    Ok(total / shape.batch as f64)
}

/// Full training loss: multiscale soft Dice plus `lambda` times the squared
/// norm of every convolution kernel in `params`.
pub fn dice_loss(
    preds: &PredictionSet,
    gt: &Tensor,
    cfg: &DiceLossConfig,
    params: &ModelParams,
) -> Result<f64, NetError> {
    cfg.validate()?;
    let maps: Vec<&Tensor> = preds.maps().iter().collect();
    let data = dice_data_term(&maps, gt, cfg.eps)?;
    Ok(data + cfg.lambda * kernel_norm_squared(params))
}

pub fn kernel_norm_squared(params: &ModelParams) -> f64 {
    params
        .tensors
        .iter()
        .filter(|(k, _)| k.ends_with(".kernel"))
        .map(|(_, t)| t.sum_squares())
        .sum()
}

struct DiceOp {
    gt: Tensor,
    eps: f64,
}

impl CustomOp for DiceOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let upstream = grad_out.data()[0] as f64;
        let shape = self.gt.shape();
        let batch = shape.batch as f64;
        inputs
            .iter()
            .map(|pred| {
                let mut grad = Vec::with_capacity(pred.numel());
                for b in 0..shape.batch {
                    let g = self.gt.plane(b, 0);
                    let p = pred.plane(b, 0);
                    let (inter, sg, sp) = overlap_sums(g, p);
                    let num = 2.0 * inter + self.eps;
                    let den = sg + sp + self.eps;
                    let inv_den2 = 1.0 / (den * den);
                    let scale = upstream / batch;
                    grad.extend(
                        g.iter()
                            .map(|&gn| (-(2.0 * gn as f64 * den - num) * inv_den2 * scale) as f32),
                    );
                }
                Some(Tensor::from_vec(pred.shape(), grad).expect("shape preserved"))
            })
            .collect()
    }
}

/// Records the multiscale soft Dice data term on `tape`.
pub fn record_dice(tape: &mut Tape, maps: &[Var], gt: &Tensor, eps: f64) -> Result<Var, NetError> {
    let tensors: Vec<&Tensor> = maps.iter().map(|&v| tape.value(v)).collect();
    let value = dice_data_term(&tensors, gt, eps)?;
    Ok(tape.custom(
        maps,
        Tensor::scalar(value as f32),
        Some(value),
        Box::new(DiceOp { gt: gt.clone(), eps }),
    ))
}

/// Records the full loss (data term plus weight decay over the given kernels).
pub fn record_loss(
    tape: &mut Tape,
    maps: &[Var],
    gt: &Tensor,
    cfg: &DiceLossConfig,
    kernels: &[Var],
) -> Result<Var, NetError> {
    cfg.validate()?;
    let mut loss = record_dice(tape, maps, gt, cfg.eps)?;
    if cfg.lambda > 0.0 && !kernels.is_empty() {
        let mut reg = tape.sum_squares(kernels[0]);
        for &k in &kernels[1..] {
            let s = tape.sum_squares(k);
            reg = tape.add(reg, s)?;
        }
        let reg = tape.scale(reg, cfg.lambda);
        loss = tape.add(loss, reg)?;
    }
    Ok(loss)
}

/// Thresholds the scale-1 map of one batch item: foreground where `p >= threshold`.
pub fn predict_mask(preds: &PredictionSet, batch: usize, threshold: f32) -> BinaryMask {
    let s = preds.shape();
    threshold_plane(preds.primary_plane(batch), s.width, s.height, threshold)
}

pub fn threshold_plane(values: &[f32], width: usize, height: usize, threshold: f32) -> BinaryMask {
    BinaryMask::from_vec(width, height, values.iter().map(|&p| p >= threshold).collect())
        .expect("plane matches dims")
}
