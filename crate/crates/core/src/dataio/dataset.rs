use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::raster_io::{is_native, is_supported};
use super::{io_err, read_mask, read_raster, DataError};
use crate::preprocess::{prepare, ClaheConfig, PreprocessError};
use crate::vesselnet::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Drive,
    Chase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Drive => "drive",
            Self::Chase => "chase",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "drive" => Ok(Self::Drive),
            "chase" | "chase-db1" | "chasedb1" => Ok(Self::Chase),
            _ => Err(format!("unknown dataset `{s}` (expected drive or chase)")),
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => Err(format!("unknown split `{s}` (expected train or test)")),
        }
    }
}

impl DatasetKind {
    /// Images per split in the published release.
    pub fn expected_count(self, split: Split) -> usize {
        match (self, split) {
            (Self::Drive, _) => 20,
            (Self::Chase, Split::Train) => 20,
            (Self::Chase, Split::Test) => 8,
        }
    }

    /// Native `(width, height)`.
    pub fn native_size(self) -> (usize, usize) {
        match self {
            Self::Drive => (565, 584),
            Self::Chase => (999, 960),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Identifier used in reports: the numeric prefix for DRIVE, the file stem for CHASE.
    pub name: String,
    pub image: PathBuf,
    pub ground_truth: PathBuf,
    pub fov: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub kind: DatasetKind,
    pub split: Split,
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

/// Loads a split and checks it holds the published number of images.
pub fn load_dataset(root: &Path, kind: DatasetKind, split: Split) -> Result<DatasetIndex, DataError> {
    let index = scan_dataset(root, kind, split)?;
    let expected = kind.expected_count(split);
    if index.entries.len() != expected {
        return Err(DataError::Count {
            kind,
            split,
            expected,
            found: index.entries.len(),
        });
    }
    Ok(index)
}

/// Like [`load_dataset`] but accepts any non-empty image count.
///
/// A partial CHASE-DB1 folder keeps the 20:8 ratio: the last
/// `round(n * 8 / 28)` images form the test split.
pub fn scan_dataset(root: &Path, kind: DatasetKind, split: Split) -> Result<DatasetIndex, DataError> {
    if !root.is_dir() {
        return Err(DataError::Missing(vec![root.to_path_buf()]));
    }
    let entries = match kind {
        DatasetKind::Drive => scan_drive(root, split)?,
        DatasetKind::Chase => {
            let all = scan_chase(root)?;
            let n = all.len();
            let test = (n * 8 + 14) / 28;
            match split {
                Split::Train => all[..n - test].to_vec(),
                Split::Test => all[n - test..].to_vec(),
            }
        }
    };
    Ok(DatasetIndex {
        kind,
        split,
        root: root.to_path_buf(),
        entries,
    })
}

const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Supported files in `dir`, sorted by file name. Fails on native containers
/// that were never converted.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files = Vec::new();
    let mut native = Vec::new();
    for item in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = item.map_err(io_err(dir))?.path();
        if !path.is_file() {
            continue;
        }
        if is_supported(&path) {
            files.push(path);
        } else if is_native(&path) {
            native.push(path);
        }
    }
    if files.is_empty() && !native.is_empty() {
        native.sort();
        return Err(DataError::NativeFormat {
            path: native.swap_remove(0),
        });
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn find_with_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    EXTENSIONS.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

fn stem(path: &Path) -> &str {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("")
}

/// `training|test/{images,1st_manual,mask}` with files named `NN_training`,
/// `NN_manual1` and `NN_training_mask` (`test` in place of `training` for the
/// test split).
fn scan_drive(root: &Path, split: Split) -> Result<Vec<DatasetEntry>, DataError> {
    let tag = match split {
        Split::Train => "training",
        Split::Test => "test",
    };
    let base = root.join(tag);
    let (images_dir, gt_dir, fov_dir) = (base.join("images"), base.join("1st_manual"), base.join("mask"));
    let absent: Vec<PathBuf> = [&images_dir, &gt_dir]
        .into_iter()
        .filter(|d| !d.is_dir())
        .cloned()
        .collect();
    if !absent.is_empty() {
        return Err(DataError::Missing(absent));
    }
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for image in list_images(&images_dir)? {
        let id = stem(&image).split('_').next().unwrap_or("").to_string();
        let gt_stem = format!("{id}_manual1");
        let Some(ground_truth) = find_with_stem(&gt_dir, &gt_stem) else {
            missing.push(gt_dir.join(format!("{gt_stem}.png")));
            continue;
        };
        let fov = find_with_stem(&fov_dir, &format!("{id}_{tag}_mask"));
        entries.push(DatasetEntry {
            name: id,
            image,
            ground_truth,
            fov,
        });
    }
    if !missing.is_empty() {
        return Err(DataError::Missing(missing));
    }
    if entries.is_empty() {
        return Err(DataError::Missing(vec![images_dir.join(format!("01_{tag}.png"))]));
    }
    Ok(entries)
}

/// Flat folder of `Image_NNx` photographs with `Image_NNx_1stHO` and
/// `Image_NNx_2ndHO` annotations. The first annotator is used.
fn scan_chase(root: &Path) -> Result<Vec<DatasetEntry>, DataError> {
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for image in list_images(root)? {
        let s = stem(&image);
        if !s.starts_with("Image_") || s.ends_with("_1stHO") || s.ends_with("_2ndHO") {
            continue;
        }
        let gt_stem = format!("{s}_1stHO");
        match find_with_stem(root, &gt_stem) {
            Some(ground_truth) => entries.push(DatasetEntry {
                name: s.to_string(),
                image: image.clone(),
                ground_truth,
                fov: None,
            }),
            None => missing.push(root.join(format!("{gt_stem}.png"))),
        }
    }
    if !missing.is_empty() {
        return Err(DataError::Missing(missing));
    }
    if entries.is_empty() {
        return Err(DataError::Missing(vec![root.join("Image_01L.png"), root.join("Image_01L_1stHO.png")]));
    }
    Ok(entries)
}

/// Network-ready sample: the prepared image and the annotation resized with
/// nearest-neighbour sampling to `size` (height, width).
pub fn load_sample(entry: &DatasetEntry, size: (usize, usize), clahe: &ClaheConfig) -> Result<Sample, DataError> {
    let raster = read_raster(&entry.image)?;
    let gt = read_mask(&entry.ground_truth)?;
    if gt.dims() != (raster.width(), raster.height()) {
        return Err(PreprocessError::DimMismatch {
            image: (raster.width(), raster.height()),
            mask: gt.dims(),
        }
        .into());
    }
    Ok(Sample {
        image: prepare(&raster, size, clahe)?,
        mask: gt.resize_nearest(size.1, size.0),
    })
}
