use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dataio::DatasetKind;
use crate::gradcore::AdamConfig;
use crate::preprocess::ClaheConfig;
use crate::vesselnet::{DiceLossConfig, NetworkConfig, TrainHyper};

/// Every setting a run depends on. Loaded from `--config` JSON; any key can
/// be overridden by the flag of the same name (`batch_size` -> `--batch-size`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_root: Option<PathBuf>,
    /// Require the published image counts per split.
    pub strict_counts: bool,
    /// Use only the first `limit` images of a split.
    pub limit: Option<usize>,

    /// `[height, width]` fed to the network.
    pub input_size: [usize; 2],
    pub channels: [usize; 4],
    pub drb_rates: Vec<usize>,
    pub drb_rate_encoder: usize,
    pub dspp_rates: Vec<usize>,
    pub strict_dspp_extent: bool,

    pub eps: f64,
    pub lambda: f64,

    pub lr: f64,
    pub decay_rate: f64,
    /// Steps per decay factor; one epoch when absent.
    pub decay_interval: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub augment: bool,

    /// `[columns, rows]` of the CLAHE tile grid.
    pub clahe_tiles: [usize; 2],
    pub clahe_clip: f64,
    pub threshold: f64,

    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let loss = DiceLossConfig::default();
        let adam = AdamConfig::default();
        let hyper = TrainHyper::default();
        let clahe = ClaheConfig::default();
        Self {
            dataset: DatasetKind::Drive,
            data_root: None,
            strict_counts: true,
            limit: None,
            input_size: [net.input_size.0, net.input_size.1],
            channels: net.stage_channels,
            drb_rates: net.drb_rates_bottleneck,
            drb_rate_encoder: net.drb_rate_encoder,
            dspp_rates: net.dspp_rates,
            strict_dspp_extent: net.strict_dspp_extent,
            eps: loss.eps,
            lambda: loss.lambda,
            lr: adam.initial_lr,
            decay_rate: adam.decay_rate,
            decay_interval: hyper.decay_interval,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: hyper.batch_size,
            epochs: 50,
            max_steps: hyper.max_steps,
            seed: hyper.seed,
            augment: hyper.augment,
            clahe_tiles: [clahe.tiles.0, clahe.tiles.1],
            clahe_clip: clahe.clip_limit,
            threshold: 0.5,
            checkpoint: None,
            loss_csv: None,
        }
    }
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Result<Vec<usize>, _> = s.split([',', 'x']).map(|p| p.trim().parse::<usize>()).collect();
    let parts = parts.map_err(|e| format!("`{s}`: {e}"))?;
    match parts.len() {
        1 => Ok([parts[0]; N]),
        n if n == N => Ok(parts.try_into().expect("length checked")),
        n => Err(format!("`{s}` has {n} values, expected {N}")),
    }
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    parse_list::<2>(s)
}

fn parse_quad(s: &str) -> Result<[usize; 4], String> {
    parse_list::<4>(s)
}

fn parse_rates(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

/// Flag overrides for [`RunConfig`]. Absent flags leave the loaded value alone.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run configuration; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub strict_counts: Option<bool>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// `H,W`, `HxW` or a single side.
    #[arg(long, value_parser = parse_pair)]
    pub input_size: Option<[usize; 2]>,
    /// Four comma-separated stage widths.
    #[arg(long, value_parser = parse_quad)]
    pub channels: Option<[usize; 4]>,
    #[arg(long, value_parser = parse_rates)]
    pub drb_rates: Option<Vec<usize>>,
    #[arg(long)]
    pub drb_rate_encoder: Option<usize>,
    #[arg(long, value_parser = parse_rates)]
    pub dspp_rates: Option<Vec<usize>>,
    #[arg(long)]
    pub strict_dspp_extent: Option<bool>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay_rate: Option<f64>,
    #[arg(long)]
    pub decay_interval: Option<u64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub augment: Option<bool>,
    #[arg(long, value_parser = parse_pair)]
    pub clahe_tiles: Option<[usize; 2]>,
    #[arg(long)]
    pub clahe_clip: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:expr, $o:expr, [$($field:ident),*], [$($opt:ident),*]) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
        $(if let Some(v) = $o.$opt.clone() { $cfg.$opt = Some(v); })*
    };
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (or defaults) with the flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(p) => Self::from_json_file(p)?,
            None => Self::default(),
        };
        apply!(
            cfg,
            o,
            [
                dataset, strict_counts, input_size, channels, drb_rates, drb_rate_encoder, dspp_rates,
                strict_dspp_extent, eps, lambda, lr, decay_rate, beta1, beta2, adam_eps, batch_size, epochs,
                seed, augment, clahe_tiles, clahe_clip, threshold
            ],
            [data_root, limit, decay_interval, max_steps, checkpoint, loss_csv]
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("decay_rate must lie in (0, 1]");
        }
        if !(self.clahe_clip > 0.0) || self.clahe_tiles.contains(&0) {
            return bad("clahe_clip must be positive and clahe_tiles non-zero");
        }
        if self.limit == Some(0) {
            return bad("limit must be positive");
        }
        self.network().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.loss().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            stage_channels: self.channels,
            drb_rates_bottleneck: self.drb_rates.clone(),
            drb_rate_encoder: self.drb_rate_encoder,
            dspp_rates: self.dspp_rates.clone(),
            input_size: (self.input_size[0], self.input_size[1]),
            strict_dspp_extent: self.strict_dspp_extent,
            ..NetworkConfig::default()
        }
    }

    pub fn loss(&self) -> DiceLossConfig {
        DiceLossConfig {
            eps: self.eps,
            lambda: self.lambda,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            initial_lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            decay_rate: self.decay_rate,
            decay_interval: self.decay_interval.unwrap_or(1),
        }
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            augment: self.augment,
            max_steps: self.max_steps,
            decay_interval: self.decay_interval,
        }
    }

    pub fn clahe(&self) -> ClaheConfig {
        ClaheConfig {
            tiles: (self.clahe_tiles[0], self.clahe_tiles[1]),
            clip_limit: self.clahe_clip,
        }
    }
}
