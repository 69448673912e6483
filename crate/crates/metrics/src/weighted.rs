//! Weighted F-measure: errors are spread along pixel dependencies by a
//! Gaussian and background errors are weighted by their distance to the
//! object.

use crate::error::Result;
use crate::fmeasure::{f_beta, require_foreground};
use crate::map::{check_shapes, BinaryMask, ScoreMap};

// Constants of the reference definition.
const GAUSS_SIZE: usize = 7;
const GAUSS_SIGMA: f64 = 5.0;
/// Background importance decays as `2 - exp(ln(0.5) / 5 · d)`.
const DECAY_DISTANCE: f64 = 5.0;

/// Nearest foreground pixel of every pixel under Euclidean distance, with
/// ties going to the first in row-major order. Foreground pixels map to
/// themselves. Returns `(squared distance, index)` per pixel.
///
/// Per column, the closest foreground row above or below each row is found
/// in two scans; each pixel then takes the best candidate over all columns.
pub fn nearest_foreground(g: &BinaryMask) -> Vec<(u64, usize)> {
    let (h, w) = (g.height(), g.width());
    let fg = g.values();
    // column_nearest[i * w + j]: nearest foreground row to row i in column j.
    let mut column_nearest: Vec<Option<usize>> = vec![None; h * w];
    for j in 0..w {
        let mut last = None;
        for i in 0..h {
            if fg[i * w + j] {
                last = Some(i);
            }
            column_nearest[i * w + j] = last;
        }
        let mut next = None;
        for i in (0..h).rev() {
            if fg[i * w + j] {
                next = Some(i);
            }
            let slot = &mut column_nearest[i * w + j];
            if let Some(below) = next {
                // Ties keep the row above.
                match *slot {
                    Some(above) if i - above <= below - i => {}
                    _ => *slot = Some(below),
                }
            }
        }
    }
    let mut out = vec![(u64::MAX, 0); h * w];
    for i in 0..h {
        for j in 0..w {
            let mut best = (u64::MAX, usize::MAX, usize::MAX);
            for jj in 0..w {
                if let Some(r) = column_nearest[i * w + jj] {
                    let d = (r.abs_diff(i).pow(2) + jj.abs_diff(j).pow(2)) as u64;
                    if (d, r, jj) < best {
                        best = (d, r, jj);
                    }
                }
            }
            out[i * w + j] = (best.0, best.1 * w + best.2);
        }
    }
    out
}

fn gaussian_kernel() -> [[f64; GAUSS_SIZE]; GAUSS_SIZE] {
    let half = (GAUSS_SIZE / 2) as f64;
    let mut k = [[0.0; GAUSS_SIZE]; GAUSS_SIZE];
    let mut total = 0.0;
    for (a, row) in k.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (a as f64 - half, b as f64 - half);
            *v = (-(dx * dx + dy * dy) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
            total += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

/// Zero-padded correlation with the normalized Gaussian.
fn smooth(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let r = GAUSS_SIZE / 2;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in i.saturating_sub(r)..(i + r + 1).min(h) {
                for b in j.saturating_sub(r)..(j + r + 1).min(w) {
                    acc += k[a + r - i][b + r - j] * values[a * w + b];
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

/// `F^ω` with `β² = 0.3`. Foreground errors take the smaller of their own
/// value and the smoothed dependency error; background errors inherit the
/// nearest foreground error for smoothing and are scaled by distance.
pub fn weighted_f(c: &ScoreMap, g: &BinaryMask) -> Result<f64> {
    check_shapes(c, g)?;
    require_foreground(g, "weighted f-measure")?;
    let (h, w) = (g.height(), g.width());
    let fg = g.values();
    let err: Vec<f64> = c
        .values()
        .iter()
        .zip(fg)
        .map(|(&v, &gt)| if gt { 1.0 - v } else { v })
        .collect();
    let nearest = nearest_foreground(g);
    let spread: Vec<f64> = nearest.iter().map(|&(_, k)| err[k]).collect();
    let smoothed = smooth(&spread, h, w);
    let decay = 0.5f64.ln() / DECAY_DISTANCE;

    let (mut fg_err, mut bg_err) = (0.0, 0.0);
    for k in 0..h * w {
        if fg[k] {
            fg_err += err[k].min(smoothed[k]);
        } else {
            let dist = (nearest[k].0 as f64).sqrt();
            bg_err += err[k] * (2.0 - (decay * dist).exp());
        }
    }
    let n_fg = g.foreground() as f64;
    let tp = n_fg - fg_err;
    let recall = 1.0 - fg_err / n_fg;
    let precision = if tp + bg_err == 0.0 { 0.0 } else { tp / (tp + bg_err) };
    Ok(f_beta(precision, recall))
}
