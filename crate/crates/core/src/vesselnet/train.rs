use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::record_loss;
use super::{DiceLossConfig, NetError, VesselNet};
use crate::gradcore::{AdamState, Tape, Tensor};
use crate::mask::BinaryMask;
use crate::preprocess::{augment, AugmentationOp};

/// One prepared training pair: a `(1, 1, H, W)` image and its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    /// Steps per learning-rate decay; `None` decays once per epoch.
    pub decay_interval: Option<u64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 2,
            epochs: 1,
            seed: 0,
            augment: true,
            max_steps: None,
            decay_interval: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean step loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

/// Seed of the augmentation stream for one sample in one epoch.
fn sample_seed(seed: u64, index: usize, epoch: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Runs one optimizer step on a batch and returns its loss.
pub fn train_step(
    net: &mut VesselNet,
    adam: &mut AdamState,
    images: &Tensor,
    masks: &Tensor,
    loss_cfg: &DiceLossConfig,
) -> Result<f64, NetError> {
    let mut tape = Tape::new();
    let input = tape.constant(images.clone());
    let fwd = net.forward_on_tape(&mut tape, input, true)?;
    let kernels: Vec<_> = fwd
        .param_vars
        .iter()
        .filter(|(k, _)| k.ends_with(".kernel"))
        .map(|(_, &v)| v)
        .collect();
    let loss = record_loss(&mut tape, &fwd.maps, masks, loss_cfg, &kernels)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(NetError::NonFiniteLoss {
            epoch: 0,
            step: adam.step_count,
        });
    }
    let grads = tape.backward(loss)?.params();
    adam.step(&mut net.params, &grads)?;
    net.params.buffers.extend(fwd.bn_updates);
    Ok(value)
}

/// Mini-batch training with seeded shuffling and per-sample augmentation.
///
/// `on_epoch` is called with `(epoch, mean_loss)` after every epoch.
pub fn train(
    net: &mut VesselNet,
    data: &[Sample],
    hyper: &TrainHyper,
    loss_cfg: &DiceLossConfig,
    adam: &mut AdamState,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if hyper.batch_size == 0 {
        return Err(NetError::Config("batch_size must be at least 1".into()));
    }
    loss_cfg.validate()?;
    let steps_per_epoch = data.len().div_ceil(hyper.batch_size) as u64;
    adam.config.decay_interval = hyper.decay_interval.unwrap_or(steps_per_epoch).max(1);

    let mut order_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut steps = 0u64;

    'epochs: for epoch in 0..hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            if hyper.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let mut images = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &data[i];
                if hyper.augment {
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(hyper.seed, i, epoch));
                    let op = AugmentationOp::sample(&mut rng);
                    let (img, mask) = augment(&s.image, &s.mask, op)?;
                    images.push(img);
                    masks.push(mask.to_tensor());
                } else {
                    images.push(s.image.clone());
                    masks.push(s.mask.to_tensor());
                }
            }
            let images = Tensor::stack_batch(&images)?;
            let masks = Tensor::stack_batch(&masks)?;
            let loss = train_step(net, adam, &images, &masks, loss_cfg).map_err(|e| match e {
                NetError::NonFiniteLoss { .. } => NetError::NonFiniteLoss {
                    epoch,
                    step: steps,
                },
                other => other,
            })?;
            report.step_losses.push(loss);
            epoch_sum += loss;
            epoch_steps += 1;
            steps += 1;
        }
        if epoch_steps == 0 {
            break 'epochs;
        }
        let mean = epoch_sum / epoch_steps as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}
