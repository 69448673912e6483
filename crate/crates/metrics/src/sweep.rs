//! Confusion counts over the 255-level threshold grid.

use crate::map::{BinaryMask, ScoreMap};

/// Grid size: thresholds `k / 255` for `k` in `0..255`.
pub const NUM_THRESHOLDS: usize = 255;

/// The sweep keeps pixels strictly above each threshold, so a binary map
/// survives every level unchanged.
pub fn thresholds() -> [f64; NUM_THRESHOLDS] {
    std::array::from_fn(|k| k as f64 / 255.0)
}

/// `min(2 · mean(C), 1)`; pixels at or above it count as positive.
pub fn adaptive_threshold(c: &ScoreMap) -> f64 {
    (2.0 * c.mean()).min(1.0)
}

/// Pixel counts of one binarization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of(c: &ScoreMap, g: &BinaryMask, keep: impl Fn(f64) -> bool) -> Self {
        let mut out = Self::default();
        for (&v, &gt) in c.values().iter().zip(g.values()) {
            match (keep(v), gt) {
                (true, true) => out.tp += 1,
                (true, false) => out.fp += 1,
                (false, true) => out.fn_ += 1,
                (false, false) => out.tn += 1,
            }
        }
        out
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }

    pub fn actual(&self) -> usize {
        self.tp + self.fn_
    }

    /// 0 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.predicted())
    }

    /// 0 when the ground truth is empty.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.actual())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts at every grid threshold in one pass: each pixel is binned by how
/// many thresholds lie strictly below it, then counts accumulate downward.
pub fn sweep(c: &ScoreMap, g: &BinaryMask) -> Vec<Confusion> {
    let grid = thresholds();
    // hist[b] counts pixels exceeding exactly b thresholds.
    let mut fg_hist = [0usize; NUM_THRESHOLDS + 1];
    let mut bg_hist = [0usize; NUM_THRESHOLDS + 1];
    for (&v, &gt) in c.values().iter().zip(g.values()) {
        let bin = grid.partition_point(|&t| t < v);
        if gt {
            fg_hist[bin] += 1;
        } else {
            bg_hist[bin] += 1;
        }
    }
    let (fg_total, bg_total) = (g.foreground(), g.len() - g.foreground());
    let mut out = vec![Confusion::default(); NUM_THRESHOLDS];
    let (mut tp, mut fp) = (0, 0);
    for k in (0..NUM_THRESHOLDS).rev() {
        // Pixels above threshold k are those in bins k+1 and beyond.
        tp += fg_hist[k + 1];
        fp += bg_hist[k + 1];
        out[k] = Confusion {
            tp,
            fp,
            fn_: fg_total - tp,
            tn: bg_total - fp,
        };
    }
    out
}
