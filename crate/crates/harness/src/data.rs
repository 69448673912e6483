//! Synthetic camouflage scenes and dataset directories.
//!
//! A scene is a smooth noise texture with a blob made of one to three
//! ellipses. The blob is filled with an independent draw of the same
//! texture, brightened or darkened by a small contrast, so it differs from
//! the background far less than the texture varies.

use std::path::{Path, PathBuf};

use fspnet_core::{SeededRng, Tensor};
use fspnet_metrics::io::{read_mask, write_mask};
use fspnet_metrics::BinaryMask;
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;

use crate::error::{data, Result};

pub const CHANNELS: usize = 3;
/// Patch size the generator checks divisibility against by default.
pub const DEFAULT_PATCH: usize = 16;
/// Range of the foreground mean shift.
pub const CONTRAST: (f64, f64) = (0.02, 0.08);
/// Allowed foreground fraction of the mask.
pub const FOREGROUND: (f64, f64) = (0.02, 0.60);
/// Network inputs are `(v - INPUT_MEAN) / INPUT_SCALE`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_SCALE: f64 = 0.25;

const TEXTURE_AMPLITUDE: f64 = 0.12;
const BLUR_RADIUS: usize = 2;
const BLUR_PASSES: usize = 3;

/// RGB image with 8-bit levels, channel-planar, values `k / 255`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Image {
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut values = vec![0.0; CHANNELS * h * w];
        for (k, px) in img.pixels().enumerate() {
            for c in 0..CHANNELS {
                values[c * h * w + k] = f64::from(px.0[c]) / 255.0;
            }
        }
        Self {
            height: h,
            width: w,
            values,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height, self.width);
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let k = y as usize * w + x as usize;
            image::Rgb(std::array::from_fn(|c| {
                (self.values[c * h * w + k] * 255.0).round() as u8
            }))
        })
    }

    /// Mirrored left to right.
    pub fn flipped(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut values = self.values.clone();
        for row in values.chunks_mut(w) {
            row.reverse();
        }
        debug_assert_eq!(values.len(), CHANNELS * h * w);
        Self { values, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Image,
    pub mask: BinaryMask,
}

pub fn flip_mask(mask: &BinaryMask) -> BinaryMask {
    let mut bits = mask.values().to_vec();
    for row in bits.chunks_mut(mask.width()) {
        row.reverse();
    }
    BinaryMask::new(mask.height(), mask.width(), bits).expect("same shape")
}

/// Stacks images into `[n, 3, h, w]` network input.
pub fn batch_images(images: &[&Image]) -> Tensor<f64> {
    let (h, w) = (images[0].height, images[0].width);
    let data = images
        .iter()
        .flat_map(|im| im.values.iter().map(|v| (v - INPUT_MEAN) / INPUT_SCALE))
        .collect();
    Tensor::new([images.len(), CHANNELS, h, w], data).expect("equal image sizes")
}

/// Stacks masks into `[n, 1, h, w]` targets.
pub fn batch_masks(masks: &[&BinaryMask]) -> Tensor<f64> {
    let (h, w) = (masks[0].height(), masks[0].width());
    let data = masks
        .iter()
        .flat_map(|m| m.values().iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new([masks.len(), 1, h, w], data).expect("equal mask sizes")
}

/// Zero-mean, unit-variance noise blurred by repeated box filters.
fn texture(rng: &mut SeededRng, h: usize, w: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
    let r = BLUR_RADIUS as isize;
    for _ in 0..BLUR_PASSES {
        let mut tmp = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (lo, hi) = (
                    (j as isize - r).max(0) as usize,
                    (j as isize + r).min(w as isize - 1) as usize,
                );
                tmp[i * w + j] = v[i * w + lo..=i * w + hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            }
        }
        for i in 0..h {
            for j in 0..w {
                let (lo, hi) = (
                    (i as isize - r).max(0) as usize,
                    (i as isize + r).min(h as isize - 1) as usize,
                );
                v[i * w + j] = (lo..=hi).map(|ii| tmp[ii * w + j]).sum::<f64>() / (hi - lo + 1) as f64;
            }
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    v.iter().map(|x| (x - mean) / sd).collect()
}

fn blob(rng: &mut SeededRng, h: usize, w: usize) -> Vec<bool> {
    let count = 1 + rng.below(3);
    let ellipses: Vec<[f64; 5]> = (0..count)
        .map(|_| {
            let size = h.min(w) as f64;
            [
                rng.uniform_in(0.2, 0.8) * h as f64,
                rng.uniform_in(0.2, 0.8) * w as f64,
                rng.uniform_in(0.08, 0.3) * size,
                rng.uniform_in(0.08, 0.3) * size,
                rng.uniform_in(0.0, std::f64::consts::PI),
            ]
        })
        .collect();
    (0..h * w)
        .map(|k| {
            let (y, x) = ((k / w) as f64 + 0.5, (k % w) as f64 + 0.5);
            ellipses.iter().any(|&[cy, cx, ry, rx, theta]| {
                let (dy, dx) = (y - cy, x - cx);
                let (s, c) = theta.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            })
        })
        .collect()
}

/// Mean and standard deviation of the pixels selected by `keep`, over all
/// channels.
pub fn region_stats(image: &Image, mask: &BinaryMask, keep: bool) -> (f64, f64) {
    let plane = image.height * image.width;
    let vals: Vec<f64> = (0..CHANNELS * plane)
        .filter(|k| mask.values()[k % plane] == keep)
        .map(|k| image.values[k])
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Whether a quantized scene meets the camouflage constraints: foreground
/// fraction in range, mean difference at most the maximum contrast, and
/// foreground mean and spread within one background standard deviation.
pub fn is_camouflaged(image: &Image, mask: &BinaryMask) -> bool {
    let frac = mask.foreground() as f64 / mask.len() as f64;
    if !(FOREGROUND.0..=FOREGROUND.1).contains(&frac) {
        return false;
    }
    let (fg_mean, fg_sd) = region_stats(image, mask, true);
    let (bg_mean, bg_sd) = region_stats(image, mask, false);
    (fg_mean - bg_mean).abs() <= CONTRAST.1 && (fg_mean - bg_mean).abs() <= bg_sd && (fg_sd - bg_sd).abs() <= bg_sd
}

fn scene(rng: &mut SeededRng, h: usize, w: usize) -> (Image, BinaryMask) {
    loop {
        let bits = blob(rng, h, w);
        let mask = BinaryMask::new(h, w, bits).expect("sized");
        let frac = mask.foreground() as f64 / mask.len() as f64;
        if !(FOREGROUND.0..=FOREGROUND.1).contains(&frac) {
            continue;
        }
        let sign = if rng.coin(0.5) { 1.0 } else { -1.0 };
        let delta = sign * rng.uniform_in(CONTRAST.0, CONTRAST.1);
        let mut values = vec![0.0; CHANNELS * h * w];
        for c in 0..CHANNELS {
            let base = rng.uniform_in(0.3, 0.7);
            let bg = texture(rng, h, w);
            let fg = texture(rng, h, w);
            for k in 0..h * w {
                let v = if mask.values()[k] {
                    base + delta + TEXTURE_AMPLITUDE * fg[k]
                } else {
                    base + TEXTURE_AMPLITUDE * bg[k]
                };
                values[c * h * w + k] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
        let image = Image {
            height: h,
            width: w,
            values,
        };
        // Checked on the 8-bit values that are actually written.
        if is_camouflaged(&image, &mask) {
            return (image, mask);
        }
    }
}

/// `count` scenes, deterministic in `seed`. Scene `i` draws from its own
/// stream, so scenes are generated in parallel and independent of `count`.
pub fn gen_synthetic(count: usize, h: usize, w: usize, seed: u64, patch_size: usize) -> Result<Vec<Sample>> {
    if h == 0 || w == 0 || patch_size == 0 || !h.is_multiple_of(patch_size) || !w.is_multiple_of(patch_size) {
        return Err(data(format!(
            "image size {h}x{w} is not divisible by patch size {patch_size}"
        )));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::derive(seed, i as u64);
            let (image, mask) = scene(&mut rng, h, w);
            Sample {
                name: format!("{i:04}"),
                image,
                mask,
            }
        })
        .collect())
}

/// `DIR/images/NAME.png` and `DIR/masks/NAME.png`.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    for s in samples {
        save_image(&dir.join("images").join(format!("{}.png", s.name)), &s.image)?;
        write_mask(&dir.join("masks").join(format!("{}.png", s.name)), &s.mask)?;
    }
    Ok(())
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    image
        .to_rgb8()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(Image::from_rgb8(&img.into_rgb8()))
}

/// Image files in `dir` by name, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "pgm", "ppm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Images under `dir`, sorted by name.
pub fn load_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    list_images(dir)?
        .par_iter()
        .map(|p| Ok((stem(p), load_image(p)?)))
        .collect()
}

/// Every image under `DIR/images` with its mask of the same stem.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let images = list_images(&dir.join("images"))?;
    if images.is_empty() {
        return Err(data(format!("no images under {}", dir.join("images").display())));
    }
    images
        .par_iter()
        .map(|p| {
            let name = stem(p);
            let image = load_image(p)?;
            let mask_path = dir.join("masks").join(format!("{name}.png"));
            let mask = read_mask(&mask_path).map_err(|e| data(e.to_string()))?;
            if (mask.height(), mask.width()) != (image.height, image.width) {
                return Err(data(format!("{name}: mask and image sizes differ")));
            }
            Ok(Sample { name, image, mask })
        })
        .collect()
}
