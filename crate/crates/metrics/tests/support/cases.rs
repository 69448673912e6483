//! Random prediction/ground-truth pairs of several flavours.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub struct Case {
    pub h: usize,
    pub w: usize,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
}

fn ellipse_mask(rng: &mut StdRng, h: usize, w: usize) -> Vec<f64> {
    let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
    let (ry, rx) = (
        rng.random_range(1.0..h as f64 / 2.0),
        rng.random_range(1.0..w as f64 / 2.0),
    );
    (0..h * w)
        .map(|k| {
            let (y, x) = ((k / w) as f64, (k % w) as f64);
            let d = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2);
            if d <= 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Foreground and background both present.
fn mixed_mask(rng: &mut StdRng, h: usize, w: usize, kind: usize) -> Vec<f64> {
    loop {
        let g = if kind.is_multiple_of(2) {
            ellipse_mask(rng, h, w)
        } else {
            let p = rng.random_range(0.02..0.7);
            (0..h * w).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect()
        };
        let fg: f64 = g.iter().sum();
        if fg > 0.0 && fg < (h * w) as f64 {
            return g;
        }
    }
}

/// Case `i` of a fixed sequence cycling through prediction styles: uniform
/// noise, 8-bit levels, noisy truth, binary, and a single-pixel object.
pub fn case(seed: u64, i: usize, h: usize, w: usize) -> Case {
    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
    let mut g = mixed_mask(&mut rng, h, w, i / 5);
    let c: Vec<f64> = match i % 5 {
        0 => (0..h * w).map(|_| rng.random::<f64>()).collect(),
        1 => (0..h * w)
            .map(|_| rng.random_range(0..=255u32) as f64 / 255.0)
            .collect(),
        2 => g
            .iter()
            .map(|&v| (0.6 * v + 0.5 * rng.random::<f64>()).min(1.0))
            .collect(),
        3 => g
            .iter()
            .map(|&v| if rng.random_bool(0.15) { 1.0 - v } else { v })
            .collect(),
        _ => {
            g = vec![0.0; h * w];
            g[rng.random_range(0..h * w)] = 1.0;
            (0..h * w).map(|_| rng.random::<f64>().powi(3)).collect()
        }
    };
    Case { h, w, c, g }
}
