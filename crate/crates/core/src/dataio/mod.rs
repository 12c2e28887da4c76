//! Dataset ingestion (DRIVE and CHASE-DB1 layouts), raster IO, the tensor
//! container used for checkpoints, and a synthetic fundus generator for
//! tests and demos.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

mod checkpoint;
mod container;
mod dataset;
mod raster_io;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use container::{decode_entries, encode_entries, read_tensors, write_tensors, Entry, Payload, MAGIC};
pub use dataset::{load_dataset, load_sample, scan_dataset, DatasetEntry, DatasetIndex, DatasetKind, Split};
pub use raster_io::{read_mask, read_raster, write_atomic, write_mask, write_png_gray16, write_raster};

use crate::mask::MaskError;
use crate::preprocess::PreprocessError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: cannot decode image: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("{}: {} is not decoded here; convert it to PNG first", path.display(), path.extension().and_then(|e| e.to_str()).unwrap_or("this format"))]
    NativeFormat { path: PathBuf },
    #[error("{}: unsupported file type (expected png, pgm, ppm or pnm)", path.display())]
    UnsupportedExtension { path: PathBuf },
    #[error("{}: mask pixels must be 0 or full scale (found 16-bit level {value})", path.display())]
    NotBinary { path: PathBuf, value: u16 },
    #[error("missing files:\n{}", list_paths(.0))]
    Missing(Vec<PathBuf>),
    #[error("{kind} {split} split has {found} images, expected {expected}")]
    Count {
        kind: DatasetKind,
        split: Split,
        expected: usize,
        found: usize,
    },
    #[error("{}: bad magic {found:?}", path.display())]
    BadMagic { path: PathBuf, found: Vec<u8> },
    #[error("{}: format version {found}, this build reads {expected}", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: file ends inside {section}", path.display())]
    Truncated { path: PathBuf, section: String },
    #[error("{}: checksum mismatch (stored {stored:08x}, computed {computed:08x})", path.display())]
    Checksum { path: PathBuf, stored: u32, computed: u32 },
    #[error("{}: malformed container: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

fn list_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| format!("  {}", p.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}
