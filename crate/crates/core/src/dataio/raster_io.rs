use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::{io_err, DataError};
use crate::mask::BinaryMask;
use crate::preprocess::RasterImage;

const NATIVE: [&str; 5] = ["tif", "tiff", "gif", "jpg", "jpeg"];
const SUPPORTED: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

pub(crate) fn is_supported(path: &Path) -> bool {
    SUPPORTED.contains(&extension(path).as_str())
}

pub(crate) fn is_native(path: &Path) -> bool {
    NATIVE.contains(&extension(path).as_str())
}

fn decode(path: &Path) -> Result<DynamicImage, DataError> {
    let ext = extension(path);
    if NATIVE.contains(&ext.as_str()) {
        return Err(DataError::NativeFormat {
            path: path.to_path_buf(),
        });
    }
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "pgm" | "ppm" | "pnm" => ImageFormat::Pnm,
        _ => {
            return Err(DataError::UnsupportedExtension {
                path: path.to_path_buf(),
            })
        }
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    image::load_from_memory_with_format(&bytes, format).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a PNG or netpbm file as 8-bit gray or RGB. Alpha is dropped and
/// 16-bit samples are scaled down.
pub fn read_raster(path: &Path) -> Result<RasterImage, DataError> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raster = if img.color().has_color() {
        RasterImage::new(w, h, 3, img.into_rgb8().into_raw())
    } else {
        RasterImage::gray(w, h, img.into_luma8().into_raw())
    };
    Ok(raster?)
}

/// Reads a binary mask stored as 0/255 (or 0/1, or 0/65535 at 16 bits).
pub fn read_mask(path: &Path) -> Result<BinaryMask, DataError> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma = img.into_luma16().into_raw();
    let max = luma.iter().copied().max().unwrap_or(0);
    let on = match max {
        0 | 1 => 1,
        257 => 257,
        _ => u16::MAX,
    };
    if let Some(&bad) = luma.iter().find(|&&v| v != 0 && v != on) {
        return Err(DataError::NotBinary {
            path: path.to_path_buf(),
            value: bad,
        });
    }
    Ok(BinaryMask::from_vec(w, h, luma.iter().map(|&v| v != 0).collect())?)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

fn encode_png(img: DynamicImage, path: &Path) -> Result<(), DataError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, &buf.into_inner())
}

/// Writes an 8-bit gray or RGB PNG.
pub fn write_raster(path: &Path, img: &RasterImage) -> Result<(), DataError> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let data = img.data().to_vec();
    let dynamic = if img.channels() == 3 {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, data).expect("buffer matches dims"))
    } else {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, data).expect("buffer matches dims"))
    };
    encode_png(dynamic, path)
}

/// Writes a mask as a 0/255 gray PNG.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), DataError> {
    let data = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_raster(path, &RasterImage::gray(mask.width(), mask.height(), data)?)
}

/// Writes a 16-bit gray PNG, row-major.
pub fn write_png_gray16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<(), DataError> {
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, values.to_vec())
        .ok_or_else(|| DataError::Malformed {
            path: path.to_path_buf(),
            message: format!("{} values for a {width}x{height} image", values.len()),
        })?;
    encode_png(DynamicImage::ImageLuma16(img), path)
}
