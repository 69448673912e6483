//! 8-bit grayscale PNG and PGM files.

use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{MetricError, Result};
use crate::map::{BinaryMask, ScoreMap};

fn image_error(path: &Path, source: image::ImageError) -> MetricError {
    MetricError::Image {
        path: path.display().to_string(),
        source,
    }
}

/// Reads any supported image as 8-bit luma. Returns `(height, width, bytes)`.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// PNG unless the extension is `pgm`.
pub fn write_gray(path: &Path, height: usize, width: usize, bytes: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| MetricError::InvalidMap(format!("buffer does not fill {height}x{width}")))?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    img.save_with_format(path, format).map_err(|e| image_error(path, e))
}

pub fn read_score_map(path: &Path) -> Result<ScoreMap> {
    let (h, w, bytes) = read_gray(path)?;
    ScoreMap::from_u8(h, w, &bytes)
}

/// Pixels must be 0 or 255.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (h, w, bytes) = read_gray(path)?;
    BinaryMask::from_u8(h, w, &bytes)
}

pub fn write_score_map(path: &Path, map: &ScoreMap) -> Result<()> {
    write_gray(path, map.height(), map.width(), map.to_u8())
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray(path, mask.height(), mask.width(), mask.to_u8())
}
