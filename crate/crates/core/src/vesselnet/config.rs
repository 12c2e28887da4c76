use serde::{Deserialize, Serialize};

use super::NetError;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Channel width at each of the four resolutions, finest first.
    pub stage_channels: [usize; 4],
    pub drb_rates_bottleneck: Vec<usize>,
    pub drb_rate_encoder: usize,
    pub dspp_rates: Vec<usize>,
    pub num_scales: usize,
    /// `(height, width)` the network accepts.
    pub input_size: (usize, usize),
    /// Reject bottleneck maps smaller than the widest pyramid kernel span.
    /// Small desk-scale inputs turn this off so the largest rates see mostly padding.
    pub strict_dspp_extent: bool,
    pub bn_momentum: f32,
    pub bn_eps: f32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            stage_channels: [32, 64, 128, 256],
            drb_rates_bottleneck: vec![1, 2, 4],
            drb_rate_encoder: 2,
            dspp_rates: vec![1, 6, 12, 18],
            num_scales: 4,
            input_size: (512, 512),
            strict_dspp_extent: true,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

impl NetworkConfig {
    /// Small configuration for CPU experiments at `size`x`size`.
    pub fn desk(size: usize, stage_channels: [usize; 4]) -> Self {
        Self {
            stage_channels,
            input_size: (size, size),
            strict_dspp_extent: false,
            ..Self::default()
        }
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_size.0 / 8, self.input_size.1 / 8)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::Config(msg));
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return bad(format!("input_size {h}x{w} must be positive and divisible by 8"));
        }
        if self.stage_channels.contains(&0) {
            return bad("stage_channels must all be positive".into());
        }
        if self.num_scales != 4 {
            return bad(format!(
                "num_scales must be 4 (one head per decoder resolution plus the pyramid), got {}",
                self.num_scales
            ));
        }
        if self.dspp_rates.is_empty() || self.drb_rates_bottleneck.is_empty() {
            return bad("dilation rate lists must not be empty".into());
        }
        if self
            .dspp_rates
            .iter()
            .chain(&self.drb_rates_bottleneck)
            .chain(std::iter::once(&self.drb_rate_encoder))
            .any(|&r| r == 0)
        {
            return bad("dilation rates must be at least 1".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || !(self.bn_eps > 0.0) {
            return bad("bn_momentum must lie in (0,1) and bn_eps must be positive".into());
        }
        Ok(())
    }
}

/// Smoothing constant and weight-decay coefficient of the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiceLossConfig {
    pub eps: f64,
    pub lambda: f64,
}

impl Default for DiceLossConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            lambda: 0.0008,
        }
    }
}

impl DiceLossConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.eps > 0.0) || !(self.lambda >= 0.0) {
            return Err(NetError::Config(format!(
                "loss needs eps > 0 and lambda >= 0 (got eps={}, lambda={})",
                self.eps, self.lambda
            )));
        }
        Ok(())
    }
}
