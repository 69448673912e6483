use crate::error::{MetricError, Result};

/// Prediction `C`: finite values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(MetricError::InvalidMap(format!(
                "{} values cannot fill a {height}x{width} score map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricError::InvalidMap(format!("score {v} is outside [0, 1]")));
        }
        Ok(Self { height, width, values })
    }

    /// 8-bit intensities mapped to `[0, 1]` by `/255`.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            values: mask.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// `1 - C`.
    pub fn complement(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            ..self.clone()
        }
    }

    /// Rounded to the nearest of the 256 8-bit levels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

/// Ground truth `G`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(MetricError::InvalidMap(format!(
                "{} values cannot fill a {height}x{width} mask",
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    /// Accepts only exact 0.0 and 1.0.
    pub fn from_f64(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let bits = values
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(MetricError::InvalidMap(format!("mask value {v} is not binary"))),
            })
            .collect::<Result<_>>()?;
        Self::new(height, width, bits)
    }

    /// Bytes must be 0 or 255.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let bits = bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                255 => Ok(true),
                _ => Err(MetricError::InvalidMap(format!("mask byte {b} is neither 0 nor 255"))),
            })
            .collect::<Result<_>>()?;
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn foreground(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

pub(crate) fn check_shapes(c: &ScoreMap, g: &BinaryMask) -> Result<()> {
    if (c.height, c.width) != (g.height, g.width) {
        return Err(MetricError::ShapeMismatch {
            pred_h: c.height,
            pred_w: c.width,
            gt_h: g.height,
            gt_w: g.width,
        });
    }
    Ok(())
}
