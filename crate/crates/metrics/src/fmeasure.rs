use crate::error::{MetricError, Result};
use crate::map::{check_shapes, BinaryMask, ScoreMap};
use crate::sweep::{adaptive_threshold, sweep, Confusion};

/// `β²`, weighting precision below recall.
pub const BETA_SQUARED: f64 = 0.3;

/// `(1 + β²) P R / (β² P + R)`, 0 when both are 0. The numerator factor is
/// formed the same way as the denominator so `P = R = 1` gives exactly 1.
pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let denom = BETA_SQUARED * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (BETA_SQUARED + 1.0) * precision * recall / denom
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FMeasures {
    pub adaptive: f64,
    pub mean: f64,
    pub max: f64,
}

/// Precision and recall at every grid threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn new(counts: &[Confusion]) -> Self {
        Self {
            precision: counts.iter().map(Confusion::precision).collect(),
            recall: counts.iter().map(Confusion::recall).collect(),
        }
    }

    /// Mean and max of the F curve.
    pub fn reduce(&self) -> (f64, f64) {
        let curve: Vec<f64> = self
            .precision
            .iter()
            .zip(&self.recall)
            .map(|(&p, &r)| f_beta(p, r))
            .collect();
        mean_max(&curve)
    }
}

pub(crate) fn mean_max(curve: &[f64]) -> (f64, f64) {
    let max = curve.iter().copied().fold(0.0, f64::max);
    // Rounding can carry the mean of equal values just past them.
    let mean = (curve.iter().sum::<f64>() / curve.len() as f64).min(max);
    (mean, max)
}

pub(crate) fn require_foreground(g: &BinaryMask, metric: &'static str) -> Result<()> {
    if g.foreground() == 0 {
        Err(MetricError::EmptyForeground(metric))
    } else {
        Ok(())
    }
}

/// F at the adaptive threshold plus the per-image PR curve.
pub(crate) fn f_parts(c: &ScoreMap, g: &BinaryMask) -> Result<(f64, PrCurve)> {
    check_shapes(c, g)?;
    require_foreground(g, "f-measure")?;
    let t = adaptive_threshold(c);
    let at = Confusion::of(c, g, |v| v >= t);
    Ok((f_beta(at.precision(), at.recall()), PrCurve::new(&sweep(c, g))))
}

pub fn f_measures(c: &ScoreMap, g: &BinaryMask) -> Result<FMeasures> {
    let (adaptive, curve) = f_parts(c, g)?;
    let (mean, max) = curve.reduce();
    Ok(FMeasures { adaptive, mean, max })
}
