//! Structure measure: an object-aware term comparing foreground and
//! background score distributions and a region-aware term of block-wise
//! structural similarity around the ground-truth centroid.

use crate::error::Result;
use crate::map::{check_shapes, BinaryMask, ScoreMap};

/// Weight of the object-aware term.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// `α S_o + (1 - α) S_r`, clamped below at 0. A truth with no foreground
/// scores `1 - mean(C)`; one with no background scores `mean(C)`.
pub fn s_measure(c: &ScoreMap, g: &BinaryMask, alpha: f64) -> Result<f64> {
    check_shapes(c, g)?;
    let fg = g.foreground();
    if fg == 0 {
        return Ok(1.0 - c.mean());
    }
    if fg == g.len() {
        return Ok(c.mean());
    }
    Ok((alpha * object_aware(c, g) + (1.0 - alpha) * region_aware(c, g)).max(0.0))
}

/// `2x / (x² + 1 + σ)` over one region, `σ` the sample standard deviation.
fn object_similarity(values: impl Iterator<Item = f64> + Clone) -> (f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    let mean = sum / n as f64;
    let sd = if n > 1 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (2.0 * mean / (mean * mean + 1.0 + sd), n)
}

/// Foreground scores against 1, background complements against 1, mixed
/// by region size. Weighting by integer pixel counts keeps a perfect map at
/// exactly 1.
fn object_aware(c: &ScoreMap, g: &BinaryMask) -> f64 {
    let pairs = c.values().iter().zip(g.values());
    let (s_fg, n_fg) = object_similarity(pairs.clone().filter(|p| *p.1).map(|p| *p.0));
    let (s_bg, n_bg) = object_similarity(pairs.filter(|p| !*p.1).map(|p| 1.0 - *p.0));
    (n_fg as f64 * s_fg + n_bg as f64 * s_bg) / (n_fg + n_bg) as f64
}

/// Rounds half away from zero, as the reference definition does.
fn centroid(g: &BinaryMask) -> (usize, usize) {
    let (mut rows, mut cols, mut n) = (0usize, 0usize, 0usize);
    for (k, _) in g.values().iter().enumerate().filter(|p| *p.1) {
        rows += k / g.width() + 1;
        cols += k % g.width() + 1;
        n += 1;
    }
    let row = (rows as f64 / n as f64).round() as usize;
    let col = (cols as f64 / n as f64).round() as usize;
    (row, col)
}

/// Four quadrants split after the 1-based centroid, each scored by
/// `ssim` and weighted by its area. Empty quadrants have zero weight.
fn region_aware(c: &ScoreMap, g: &BinaryMask) -> f64 {
    let (h, w) = (g.height(), g.width());
    let (y, x) = centroid(g);
    let blocks = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let mut total = 0.0;
    for (r0, r1, c0, c1) in blocks {
        let area = (r1 - r0) * (c1 - c0);
        if area > 0 {
            total += area as f64 * ssim(c, g, r0..r1, c0..c1);
        }
    }
    total / (h * w) as f64
}

/// `4 x̄ ȳ σ_xy / ((x̄² + ȳ²)(σ_x² + σ_y²))` with unbiased moments; 1 when
/// both the numerator and denominator vanish, 0 when only the numerator
/// does.
fn ssim(c: &ScoreMap, g: &BinaryMask, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let w = c.width();
    let pixels: Vec<(f64, f64)> = rows
        .flat_map(|i| cols.clone().map(move |j| i * w + j))
        .map(|k| (c.values()[k], if g.values()[k] { 1.0 } else { 0.0 }))
        .collect();
    let n = pixels.len() as f64;
    let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for &(x, y) in &pixels {
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
        cov += (x - mx) * (y - my);
    }
    if n > 1.0 {
        vx /= n - 1.0;
        vy /= n - 1.0;
        cov /= n - 1.0;
    }
    let num = 4.0 * mx * my * cov;
    let den = (mx * mx + my * my) * (vx + vy);
    if num != 0.0 {
        num / den
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}
