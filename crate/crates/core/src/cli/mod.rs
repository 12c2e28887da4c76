//! `vesseg` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error
//! (missing or malformed inputs, unreadable checkpoints), 3 numeric failure
//! (non-finite loss). Diagnostics go to stderr; data goes to files or stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

mod config;

pub use config::{Overrides, RunConfig};

use crate::dataio::{
    self, load_checkpoint, load_dataset, load_sample, read_mask, read_raster, save_checkpoint, scan_dataset,
    synth, write_atomic, write_mask, write_png_gray16, write_raster, Checkpoint, DataError, DatasetEntry,
    DatasetIndex, DatasetKind, Split,
};
use crate::gradcore::{AdamState, Shape, Tensor};
use crate::mask::BinaryMask;
use crate::metrics::{self, confusion, pr_csv, pr_curve, report, to_native, EvalReport, ImageScore};
use crate::morphometry::{overlay, width_map};
use crate::preprocess::{prepare, ClaheConfig, RasterImage};
use crate::vesselnet::{train, NetError, VesselNet};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config(_) | NetError::PyramidTooSmall { .. } => Self::Config(e.to_string()),
            NetError::NonFiniteLoss { .. } | NetError::Grad(_) => Self::Numeric(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<crate::morphometry::MorphError> for CliError {
    fn from(e: crate::morphometry::MorphError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<crate::preprocess::PreprocessError> for CliError {
    fn from(e: crate::preprocess::PreprocessError) -> Self {
        Self::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "vesseg", version, about = "Retinal vessel segmentation, width maps and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network; writes a checkpoint and an `epoch,mean_loss` CSV.
    Train {
        #[command(flatten)]
        cfg: Overrides,
        /// Continue from a checkpoint, including its optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Probability map (8-bit PNG) for one image, optionally thresholded.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
        /// Also write the native-size probabilities as 32-bit floats in the tensor container format.
        #[arg(long)]
        raw: Option<PathBuf>,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Pooled and per-image metrics over a dataset split.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Count only pixels inside the field-of-view masks.
        #[arg(long)]
        fov: bool,
        /// Score the ground truth against itself (no network).
        #[arg(long)]
        gt_as_prediction: bool,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-image CSV table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Width overlay and `x,y,width` CSV for a binary vessel mask.
    Widths {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Background for the overlay; the mask itself when absent.
        #[arg(long)]
        image: Option<PathBuf>,
        /// 16-bit PNG of widths in hundredths of a pixel.
        #[arg(long)]
        width_png: Option<PathBuf>,
    },
    /// Pooled precision-recall points over a split at thresholds 0.01..0.99.
    Prcurve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        fov: bool,
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Write a synthetic fundus dataset in the DRIVE or CHASE-DB1 layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "drive")]
        layout: DatasetKind,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 2)]
        train: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vesseg: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { cfg, resume } => cmd_train(&RunConfig::resolve(&cfg)?, resume.as_deref()),
        Command::Predict {
            ckpt,
            image,
            out,
            mask_out,
            raw,
            cfg,
        } => cmd_predict(&RunConfig::resolve(&cfg)?, &ckpt, &image, &out, mask_out.as_deref(), raw.as_deref()),
        Command::Eval {
            ckpt,
            split,
            fov,
            gt_as_prediction,
            out,
            table,
            cfg,
        } => {
            let cfg = RunConfig::resolve(&cfg)?;
            let net = match (gt_as_prediction, ckpt) {
                (true, _) => None,
                (false, Some(p)) => Some(load_network(&p)?),
                (false, None) => return Err(CliError::Config("eval needs --ckpt or --gt-as-prediction".into())),
            };
            let source = net.as_ref().map_or(Source::GroundTruth, Source::Network);
            let rep = cmd_eval(&cfg, &source, split, fov)?;
            let json = serde_json::to_string_pretty(&rep).expect("report serializes") + "\n";
            match out {
                Some(p) => write_atomic(&p, json.as_bytes())?,
                None => print!("{json}"),
            }
            if let Some(p) = table {
                write_atomic(&p, rep.per_image_csv().as_bytes())?;
            }
            Ok(())
        }
        Command::Widths {
            mask,
            out,
            csv,
            image,
            width_png,
        } => cmd_widths(&mask, &out, &csv, image.as_deref(), width_png.as_deref()),
        Command::Prcurve {
            ckpt,
            out,
            split,
            fov,
            cfg,
        } => {
            let cfg = RunConfig::resolve(&cfg)?;
            let net = load_network(&ckpt)?;
            write_atomic(&out, cmd_prcurve(&cfg, &net, split, fov)?.as_bytes())?;
            Ok(())
        }
        Command::Synth {
            out,
            layout,
            width,
            height,
            train,
            test,
            seed,
        } => {
            if width == 0 || height == 0 {
                return Err(CliError::Config("width and height must be positive".into()));
            }
            match layout {
                DatasetKind::Drive => synth::write_drive_layout(&out, width, height, train, test, seed)?,
                DatasetKind::Chase => synth::write_chase_layout(&out, width, height, train + test, seed)?,
            }
            Ok(())
        }
    }
}

fn dataset_index(cfg: &RunConfig, split: Split) -> Result<DatasetIndex, CliError> {
    let root = cfg
        .data_root
        .as_deref()
        .ok_or_else(|| CliError::Config("data_root is not set".into()))?;
    let mut index = if cfg.strict_counts {
        load_dataset(root, cfg.dataset, split)?
    } else {
        scan_dataset(root, cfg.dataset, split)?
    };
    if let Some(n) = cfg.limit {
        index.entries.truncate(n);
    }
    Ok(index)
}

fn load_network(path: &Path) -> Result<VesselNet, CliError> {
    load_checkpoint(path)?.network().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Trains on the configured split and writes the checkpoint and loss history.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let ckpt_path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Config("checkpoint output path is not set".into()))?;
    let index = dataset_index(cfg, Split::Train)?;
    let size = (cfg.input_size[0], cfg.input_size[1]);
    let clahe = cfg.clahe();
    let data = index
        .entries
        .iter()
        .map(|e| load_sample(e, size, &clahe))
        .collect::<Result<Vec<_>, _>>()?;

    let (mut net, mut adam) = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if ckpt.network != cfg.network() {
                return Err(CliError::Config(format!(
                    "{} was trained with a different network configuration",
                    p.display()
                )));
            }
            let net = ckpt.network()?;
            let mut adam = ckpt.adam.unwrap_or_else(|| AdamState::new(cfg.adam()));
            adam.config = cfg.adam();
            (net, adam)
        }
        None => (VesselNet::new(cfg.network(), cfg.seed)?, AdamState::new(cfg.adam())),
    };

    let report = train(&mut net, &data, &cfg.hyper(), &cfg.loss(), &mut adam, |epoch, loss| {
        eprintln!("epoch {} mean_loss {loss:.6}", epoch + 1);
    })?;

    save_checkpoint(&Checkpoint::new(&net, Some(&adam)), &ckpt_path)?;
    if let Some(p) = &cfg.loss_csv {
        write_atomic(p, loss_csv(&report.epoch_losses).as_bytes())?;
    }
    Ok(())
}

/// `epoch,mean_loss` rows, epochs counted from 1.
pub fn loss_csv(epoch_losses: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in epoch_losses.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("string write");
    }
    out
}

/// Probability map at the raster's native size.
pub fn predict_native(net: &VesselNet, raster: &RasterImage, clahe: &ClaheConfig) -> Result<Vec<f32>, CliError> {
    let input = prepare(raster, net.config.input_size, clahe)?;
    let out = net.forward(&input, false)?;
    let prob = to_native(out.predictions.primary_plane(0), net.config.input_size, raster.width(), raster.height())?;
    Ok(prob)
}

fn quantize(prob: &[f32]) -> Vec<u8> {
    prob.iter().map(|&p| (255.0 * p.clamp(0.0, 1.0)).round() as u8).collect()
}

fn threshold_mask(prob: &[f32], width: usize, height: usize, threshold: f64) -> BinaryMask {
    BinaryMask::from_vec(width, height, prob.iter().map(|&p| p as f64 >= threshold).collect())
        .expect("map matches dims")
}

pub fn cmd_predict(
    cfg: &RunConfig,
    ckpt: &Path,
    image: &Path,
    out: &Path,
    mask_out: Option<&Path>,
    raw: Option<&Path>,
) -> Result<(), CliError> {
    let net = load_network(ckpt)?;
    let raster = read_raster(image)?;
    let (w, h) = (raster.width(), raster.height());
    let prob = predict_native(&net, &raster, &cfg.clahe())?;
    write_raster(out, &RasterImage::gray(w, h, quantize(&prob))?)?;
    if let Some(p) = mask_out {
        write_mask(p, &threshold_mask(&prob, w, h, cfg.threshold))?;
    }
    if let Some(p) = raw {
        let t = Tensor::from_vec(Shape::new(1, 1, h, w), prob).expect("map matches dims");
        dataio::write_tensors(p, &[("probability", &t)])?;
    }
    Ok(())
}

/// Where eval gets its probability maps.
pub enum Source<'a> {
    Network(&'a VesselNet),
    /// The annotation itself, as probabilities 0 and 1.
    GroundTruth,
}

struct Scored {
    name: String,
    prob: Vec<f32>,
    gt: BinaryMask,
    fov: Option<BinaryMask>,
}

fn score_entry(cfg: &RunConfig, source: &Source, e: &DatasetEntry, use_fov: bool) -> Result<Scored, CliError> {
    let gt = read_mask(&e.ground_truth)?;
    let fov = match (use_fov, &e.fov) {
        (false, _) => None,
        (true, Some(p)) => Some(read_mask(p)?),
        (true, None) => {
            return Err(CliError::Data(format!("{}: no field-of-view mask for `{}`", e.image.display(), e.name)))
        }
    };
    let prob = match source {
        Source::GroundTruth => gt.data().iter().map(|&b| b as u8 as f32).collect(),
        Source::Network(net) => {
            let raster = read_raster(&e.image)?;
            if (raster.width(), raster.height()) != gt.dims() {
                return Err(CliError::Data(format!(
                    "{}: image is {}x{} but its annotation is {}x{}",
                    e.image.display(),
                    raster.width(),
                    raster.height(),
                    gt.width(),
                    gt.height()
                )));
            }
            predict_native(net, &raster, &cfg.clahe())?
        }
    };
    Ok(Scored {
        name: e.name.clone(),
        prob,
        gt,
        fov,
    })
}

/// Thresholded predictions scored at native resolution; counts are pooled over the split.
pub fn cmd_eval(cfg: &RunConfig, source: &Source, split: Split, use_fov: bool) -> Result<EvalReport, CliError> {
    let index = dataset_index(cfg, split)?;
    let mut per_image = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let s = score_entry(cfg, source, e, use_fov)?;
        let (w, h) = s.gt.dims();
        let pred = threshold_mask(&s.prob, w, h, cfg.threshold);
        let counts = confusion(&pred, &s.gt, s.fov.as_ref())?;
        per_image.push(ImageScore {
            name: s.name,
            counts,
            metrics: report(&counts)?,
        });
    }
    Ok(EvalReport::from_images(per_image)?)
}

pub fn cmd_prcurve(cfg: &RunConfig, net: &VesselNet, split: Split, use_fov: bool) -> Result<String, CliError> {
    let index = dataset_index(cfg, split)?;
    let source = Source::Network(net);
    let scored = index
        .entries
        .iter()
        .map(|e| score_entry(cfg, &source, e, use_fov))
        .collect::<Result<Vec<_>, _>>()?;
    let items: Vec<_> = scored.iter().map(|s| (s.prob.as_slice(), &s.gt, s.fov.as_ref())).collect();
    let points = pr_curve(&items, &metrics::default_thresholds())?;
    Ok(pr_csv(&points))
}

pub fn cmd_widths(
    mask_path: &Path,
    out: &Path,
    csv: &Path,
    image: Option<&Path>,
    width_png: Option<&Path>,
) -> Result<(), CliError> {
    let mask = read_mask(mask_path)?;
    let analysis = width_map(&mask)?;
    let base = match image {
        Some(p) => read_raster(p)?,
        None => RasterImage::gray(
            mask.width(),
            mask.height(),
            mask.data().iter().map(|&b| if b { 96 } else { 0 }).collect(),
        )?,
    };
    write_raster(out, &overlay(&base, &analysis.map)?)?;
    write_atomic(csv, analysis.to_csv().as_bytes())?;
    if let Some(p) = width_png {
        write_png_gray16(p, mask.width(), mask.height(), &analysis.map.to_centipixels())?;
    }
    Ok(())
}
