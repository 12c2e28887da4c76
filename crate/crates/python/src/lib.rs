//! Python module `vesseg`.
//!
//! Images and masks cross the boundary as flat row-major lists with explicit
//! width and height; probability maps are lists of floats in `[0, 1]`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vesseg::dataio::{self, DatasetKind, Split};
use vesseg::gradcore::{Shape, Tensor};
use vesseg::mask::BinaryMask;
use vesseg::metrics::{self, ConfusionCounts};
use vesseg::morphometry;
use vesseg::preprocess::{self, ClaheConfig, RasterImage};
use vesseg::vesselnet::{NetworkConfig, VesselNet};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn data_err(e: dataio::DataError) -> PyErr {
    match e {
        dataio::DataError::Io { .. } | dataio::DataError::Missing(_) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn mask_from(values: Vec<u8>, width: usize, height: usize) -> PyResult<BinaryMask> {
    if values.iter().any(|&v| v > 1) {
        return Err(PyValueError::new_err("mask values must be 0 or 1"));
    }
    BinaryMask::from_vec(width, height, values.into_iter().map(|v| v == 1).collect()).map_err(value_err)
}

fn mask_to(mask: &BinaryMask) -> Vec<u8> {
    mask.data().iter().map(|&b| b as u8).collect()
}

/// Segmentation network with the dilated encoder-decoder architecture.
#[pyclass(module = "vesseg")]
struct Network {
    net: VesselNet,
}

#[pymethods]
impl Network {
    /// Fresh network. `channels` are the four stage widths; `input_size` is the square input side.
    #[new]
    #[pyo3(signature = (channels = [32, 64, 128, 256], input_size = 512, seed = 0, strict_dspp_extent = true))]
    fn new(channels: [usize; 4], input_size: usize, seed: u64, strict_dspp_extent: bool) -> PyResult<Self> {
        let config = NetworkConfig {
            stage_channels: channels,
            input_size: (input_size, input_size),
            strict_dspp_extent,
            ..NetworkConfig::default()
        };
        Ok(Self {
            net: VesselNet::new(config, seed).map_err(value_err)?,
        })
    }

    /// Network stored in a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = dataio::load_checkpoint(&path).map_err(data_err)?;
        Ok(Self {
            net: ckpt.network().map_err(value_err)?,
        })
    }

    /// Writes weights and running statistics (no optimizer state).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataio::save_checkpoint(&dataio::Checkpoint::new(&self.net, None), &path).map_err(data_err)
    }

    fn param_count(&self) -> usize {
        self.net.params.param_count()
    }

    /// `(height, width)` the network accepts.
    #[getter]
    fn input_size(&self) -> (usize, usize) {
        self.net.config.input_size
    }

    /// All four supervision maps for one prepared image (`height * width` values in `[0, 1]`).
    fn forward(&self, py: Python<'_>, image: Vec<f32>) -> PyResult<Vec<Vec<f32>>> {
        let (h, w) = self.net.config.input_size;
        let t = Tensor::from_vec(Shape::new(1, 1, h, w), image).map_err(value_err)?;
        let net = &self.net;
        let out = py.detach(|| net.forward(&t, false)).map_err(value_err)?;
        Ok(out.predictions.maps().iter().map(|m| m.data().to_vec()).collect())
    }

    /// Probability map at the native size of an 8-bit image with 1 or 3 interleaved channels.
    #[pyo3(signature = (pixels, width, height, channels = 3))]
    fn predict(&self, py: Python<'_>, pixels: Vec<u8>, width: usize, height: usize, channels: usize) -> PyResult<Vec<f32>> {
        let raster = RasterImage::new(width, height, channels, pixels).map_err(value_err)?;
        let net = &self.net;
        py.detach(|| {
            let input = preprocess::prepare(&raster, net.config.input_size, &ClaheConfig::default())?;
            let out = net.forward(&input, false)?;
            Ok::<_, Box<dyn std::error::Error + Send + Sync>>(metrics::to_native(
                out.predictions.primary_plane(0),
                net.config.input_size,
                width,
                height,
            )?)
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let c = &self.net.config;
        format!(
            "Network(channels={:?}, input_size={:?}, params={})",
            c.stage_channels,
            c.input_size,
            self.net.params.param_count()
        )
    }
}

/// Grayscale, CLAHE, bilinear resize to `size` x `size` and scaling to `[0, 1]`.
#[pyfunction]
#[pyo3(signature = (pixels, width, height, channels = 3, size = 512, clip_limit = 2.0, tiles = (8, 8)))]
fn prepare(
    pixels: Vec<u8>,
    width: usize,
    height: usize,
    channels: usize,
    size: usize,
    clip_limit: f64,
    tiles: (usize, usize),
) -> PyResult<Vec<f32>> {
    let raster = RasterImage::new(width, height, channels, pixels).map_err(value_err)?;
    let cfg = ClaheConfig { tiles, clip_limit };
    Ok(preprocess::prepare(&raster, (size, size), &cfg).map_err(value_err)?.into_data())
}

/// Contrast-limited adaptive histogram equalization of an 8-bit gray image.
#[pyfunction]
#[pyo3(signature = (pixels, width, height, clip_limit = 2.0, tiles = (8, 8)))]
fn clahe(pixels: Vec<u8>, width: usize, height: usize, clip_limit: f64, tiles: (usize, usize)) -> PyResult<Vec<u8>> {
    let img = RasterImage::gray(width, height, pixels).map_err(value_err)?;
    Ok(preprocess::clahe(&img, &ClaheConfig { tiles, clip_limit })
        .map_err(value_err)?
        .into_data())
}

/// One-pixel-wide skeleton of a 0/1 mask.
#[pyfunction]
fn skeletonize(mask: Vec<u8>, width: usize, height: usize) -> PyResult<Vec<u8>> {
    Ok(mask_to(&morphometry::skeletonize(&mask_from(mask, width, height)?)))
}

/// Squared Euclidean distance from every pixel to the nearest skeleton pixel.
#[pyfunction]
fn edt_to_skeleton(domain: Vec<u8>, skeleton: Vec<u8>, width: usize, height: usize) -> PyResult<Vec<u64>> {
    let d = mask_from(domain, width, height)?;
    let s = mask_from(skeleton, width, height)?;
    Ok(morphometry::edt_to_skeleton(&d, &s).map_err(value_err)?.squared().to_vec())
}

/// `(x, y, width)` for every contour pixel of a 0/1 vessel mask.
#[pyfunction]
fn vessel_widths(mask: Vec<u8>, width: usize, height: usize) -> PyResult<Vec<(usize, usize, f64)>> {
    let analysis = morphometry::width_map(&mask_from(mask, width, height)?).map_err(value_err)?;
    Ok(analysis.rows.iter().map(|r| (r.x, r.y, r.width)).collect())
}

fn counts_dict<'py>(py: Python<'py>, c: &ConfusionCounts) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tp", c.tp)?;
    d.set_item("tn", c.tn)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    let r = metrics::report(c).map_err(value_err)?;
    for (k, v) in [("se", r.se), ("sp", r.sp), ("acc", r.acc), ("precision", r.precision), ("f1", r.f1)] {
        d.set_item(k, v)?;
    }
    d.set_item("undefined", r.undefined)?;
    Ok(d)
}

/// Confusion counts and derived metrics for two 0/1 masks, optionally restricted to a field of view.
#[pyfunction]
#[pyo3(signature = (pred, gt, width, height, fov = None))]
fn evaluate<'py>(
    py: Python<'py>,
    pred: Vec<u8>,
    gt: Vec<u8>,
    width: usize,
    height: usize,
    fov: Option<Vec<u8>>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = mask_from(pred, width, height)?;
    let g = mask_from(gt, width, height)?;
    let f = fov.map(|f| mask_from(f, width, height)).transpose()?;
    let c = metrics::confusion(&p, &g, f.as_ref()).map_err(value_err)?;
    counts_dict(py, &c)
}

/// `(threshold, precision, recall)` at thresholds 0.01..0.99.
#[pyfunction]
fn pr_curve(prob: Vec<f32>, gt: Vec<u8>, width: usize, height: usize) -> PyResult<Vec<(f64, f64, f64)>> {
    let g = mask_from(gt, width, height)?;
    let points = metrics::pr_curve(&[(&prob, &g, None)], &metrics::default_thresholds()).map_err(value_err)?;
    Ok(points.iter().map(|p| (p.threshold, p.precision, p.recall)).collect())
}

/// Synthetic fundus image: `(rgb_bytes, vessel_mask, fov_mask)`.
#[pyfunction]
#[pyo3(signature = (width, height, seed = 0))]
fn synth_fundus(width: usize, height: usize, seed: u64) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let f = dataio::synth::fundus(width, height, seed);
    (f.image.into_data(), mask_to(&f.vessels), mask_to(&f.fov))
}

/// Entries of a DRIVE or CHASE-DB1 split as dicts of paths.
#[pyfunction]
#[pyo3(signature = (root, kind = "drive", split = "test", strict = true))]
fn load_dataset<'py>(
    py: Python<'py>,
    root: PathBuf,
    kind: &str,
    split: &str,
    strict: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind: DatasetKind = kind.parse().map_err(value_err)?;
    let split: Split = split.parse().map_err(value_err)?;
    let index = if strict {
        dataio::load_dataset(&root, kind, split)
    } else {
        dataio::scan_dataset(&root, kind, split)
    }
    .map_err(data_err)?;
    index
        .entries
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("name", &e.name)?;
            d.set_item("image", &e.image)?;
            d.set_item("ground_truth", &e.ground_truth)?;
            d.set_item("fov", &e.fov)?;
            Ok(d)
        })
        .collect()
}

/// Runs the command-line tool with `args` (without the program name); returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("vesseg".to_string()).chain(args).collect();
    py.detach(|| vesseg::cli::main_with_args(argv))
}

#[pymodule]
#[pyo3(name = "vesseg")]
fn vesseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(clahe, m)?)?;
    m.add_function(wrap_pyfunction!(skeletonize, m)?)?;
    m.add_function(wrap_pyfunction!(edt_to_skeleton, m)?)?;
    m.add_function(wrap_pyfunction!(vessel_widths, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(synth_fundus, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
