use crate::error::Result;
use crate::fmeasure::mean_max;
use crate::map::{check_shapes, BinaryMask, ScoreMap};
use crate::sweep::{adaptive_threshold, sweep, Confusion};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EMeasures {
    pub adaptive: f64,
    pub mean: f64,
    pub max: f64,
}

/// `((1 + ξ)² / 4)` with `ξ = 2ab / (a² + b²)` for bias-removed values `a`
/// (binary map) and `b` (ground truth).
fn enhanced(a: f64, b: f64) -> f64 {
    let denom = a * a + b * b;
    let xi = if denom == 0.0 { 0.0 } else { 2.0 * a * b / denom };
    (1.0 + xi) * (1.0 + xi) / 4.0
}

/// Mean of the enhanced alignment matrix of one binarization. A binary map
/// and binary truth take only four value pairs, so the sum is formed from
/// the confusion counts. An all-background truth scores the fraction of
/// negative predictions, an all-foreground one the fraction of positives.
pub fn enhanced_alignment(k: &Confusion) -> f64 {
    let n = k.total() as f64;
    let score = if k.actual() == 0 {
        (k.fn_ + k.tn) as f64
    } else if k.actual() == k.total() {
        k.predicted() as f64
    } else {
        let mean_b = k.predicted() as f64 / n;
        let mean_g = k.actual() as f64 / n;
        let (b1, b0) = (1.0 - mean_b, -mean_b);
        let (g1, g0) = (1.0 - mean_g, -mean_g);
        k.tp as f64 * enhanced(b1, g1)
            + k.fp as f64 * enhanced(b1, g0)
            + k.fn_ as f64 * enhanced(b0, g1)
            + k.tn as f64 * enhanced(b0, g0)
    };
    score / n
}

/// E at the adaptive threshold plus the per-threshold curve.
pub(crate) fn e_parts(c: &ScoreMap, g: &BinaryMask) -> Result<(f64, Vec<f64>)> {
    check_shapes(c, g)?;
    let t = adaptive_threshold(c);
    let adaptive = enhanced_alignment(&Confusion::of(c, g, |v| v >= t));
    Ok((adaptive, sweep(c, g).iter().map(enhanced_alignment).collect()))
}

pub fn e_measures(c: &ScoreMap, g: &BinaryMask) -> Result<EMeasures> {
    let (adaptive, curve) = e_parts(c, g)?;
    let (mean, max) = mean_max(&curve);
    Ok(EMeasures { adaptive, mean, max })
}
