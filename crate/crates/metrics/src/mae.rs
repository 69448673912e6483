use crate::error::Result;
use crate::map::{check_shapes, BinaryMask, ScoreMap};

/// `(1/N) Σ |C(i) - G(i)|`.
pub fn mae(c: &ScoreMap, g: &BinaryMask) -> Result<f64> {
    check_shapes(c, g)?;
    let total: f64 = c
        .values()
        .iter()
        .zip(g.values())
        .map(|(&v, &gt)| if gt { 1.0 - v } else { v })
        .sum();
    Ok(total / c.len() as f64)
}
