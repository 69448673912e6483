//! Brute-force reference metrics, pixel by pixel, with no code shared with
//! the library. Maps are row-major `h × w` slices; masks hold 0.0 or 1.0.

#![allow(dead_code)]

pub const BETA2: f64 = 0.3;

pub fn thresholds() -> Vec<f64> {
    (0..255).map(|k| k as f64 / 255.0).collect()
}

pub fn mae(c: &[f64], g: &[f64]) -> f64 {
    c.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.len() as f64
}

fn f_beta(p: f64, r: f64) -> f64 {
    if p == 0.0 && r == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * p * r / (BETA2 * p + r)
    }
}

/// Precision and recall of `c` binarized by `keep`.
pub fn precision_recall(c: &[f64], g: &[f64], keep: impl Fn(f64) -> bool) -> (f64, f64) {
    let mut tp = 0.0;
    let mut predicted = 0.0;
    let mut actual = 0.0;
    for (&ci, &gi) in c.iter().zip(g) {
        let b = keep(ci);
        if b {
            predicted += 1.0;
        }
        if gi == 1.0 {
            actual += 1.0;
            if b {
                tp += 1.0;
            }
        }
    }
    let p = if predicted == 0.0 { 0.0 } else { tp / predicted };
    (p, tp / actual)
}

pub fn adaptive_threshold(c: &[f64]) -> f64 {
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    (2.0 * mean).min(1.0)
}

/// `(adaptive, mean, max)`.
pub fn f_measures(c: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let curve: Vec<f64> = thresholds()
        .into_iter()
        .map(|t| {
            let (p, r) = precision_recall(c, g, |v| v > t);
            f_beta(p, r)
        })
        .collect();
    let t = adaptive_threshold(c);
    let (p, r) = precision_recall(c, g, |v| v >= t);
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let max = curve.iter().cloned().fold(f64::MIN, f64::max);
    (f_beta(p, r), mean, max)
}

/// Mean enhanced alignment of a binary map against the mask.
pub fn enhanced_alignment(b: &[f64], g: &[f64]) -> f64 {
    let n = g.len() as f64;
    let fg: f64 = g.iter().sum();
    let mut total = 0.0;
    if fg == 0.0 {
        for &bi in b {
            total += 1.0 - bi;
        }
    } else if fg == n {
        for &bi in b {
            total += bi;
        }
    } else {
        let mb = b.iter().sum::<f64>() / n;
        let mg = fg / n;
        for (&bi, &gi) in b.iter().zip(g) {
            let x = bi - mb;
            let y = gi - mg;
            let denom = x * x + y * y;
            let xi = if denom == 0.0 { 0.0 } else { 2.0 * x * y / denom };
            total += (1.0 + xi) * (1.0 + xi) / 4.0;
        }
    }
    total / n
}

pub fn e_measures(c: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let binarize =
        |keep: &dyn Fn(f64) -> bool| -> Vec<f64> { c.iter().map(|&v| if keep(v) { 1.0 } else { 0.0 }).collect() };
    let curve: Vec<f64> = thresholds()
        .into_iter()
        .map(|t| enhanced_alignment(&binarize(&|v| v > t), g))
        .collect();
    let t = adaptive_threshold(c);
    let adaptive = enhanced_alignment(&binarize(&|v| v >= t), g);
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let max = curve.iter().cloned().fold(f64::MIN, f64::max);
    (adaptive, mean, max)
}

fn round_half_away(x: f64) -> f64 {
    x.signum() * (x.abs() + 0.5).floor()
}

/// Luminance-contrast-structure similarity of two equally sized blocks.
fn block_ssim(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = q.iter().sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        sx += (a - x) * (a - x);
        sy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    if n > 1.0 {
        sx /= n - 1.0;
        sy /= n - 1.0;
        sxy /= n - 1.0;
    }
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn object_score(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + var.sqrt())
}

pub fn s_measure(c: &[f64], g: &[f64], h: usize, w: usize, alpha: f64) -> f64 {
    let n = (h * w) as f64;
    let fg_count: f64 = g.iter().sum();
    let mean_c = c.iter().sum::<f64>() / n;
    if fg_count == 0.0 {
        return 1.0 - mean_c;
    }
    if fg_count == n {
        return mean_c;
    }
    // Object-aware term.
    let fg: Vec<f64> = c
        .iter()
        .zip(g)
        .filter(|(_, &gi)| gi == 1.0)
        .map(|(&ci, _)| ci)
        .collect();
    let bg: Vec<f64> = c
        .iter()
        .zip(g)
        .filter(|(_, &gi)| gi == 0.0)
        .map(|(&ci, _)| 1.0 - ci)
        .collect();
    let u = fg_count / n;
    let s_o = u * object_score(&fg) + (1.0 - u) * object_score(&bg);

    // Region-aware term, split at the rounded foreground centroid (1-based).
    let (mut sum_r, mut sum_c) = (0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            if g[i * w + j] == 1.0 {
                sum_r += (i + 1) as f64;
                sum_c += (j + 1) as f64;
            }
        }
    }
    let y = round_half_away(sum_r / fg_count) as usize;
    let x = round_half_away(sum_c / fg_count) as usize;
    let block = |r0: usize, r1: usize, c0: usize, c1: usize| -> f64 {
        let (mut p, mut q) = (Vec::new(), Vec::new());
        for i in r0..r1 {
            for j in c0..c1 {
                p.push(c[i * w + j]);
                q.push(g[i * w + j]);
            }
        }
        if p.is_empty() {
            0.0
        } else {
            block_ssim(&p, &q)
        }
    };
    let w1 = (x * y) as f64 / n;
    let w2 = ((w - x) * y) as f64 / n;
    let w3 = (x * (h - y)) as f64 / n;
    let w4 = 1.0 - w1 - w2 - w3;
    let s_r = w1 * block(0, y, 0, x) + w2 * block(0, y, x, w) + w3 * block(y, h, 0, x) + w4 * block(y, h, x, w);
    (alpha * s_o + (1.0 - alpha) * s_r).max(0.0)
}

/// Weighted F-measure with a brute-force nearest-foreground search (ties go
/// to the first foreground pixel in row-major order) and a direct 7×7
/// zero-padded Gaussian filter.
pub fn weighted_f(c: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let fg: Vec<usize> = (0..h * w).filter(|&k| g[k] == 1.0).collect();
    let err: Vec<f64> = c.iter().zip(g).map(|(a, b)| (a - b).abs()).collect();
    let mut dist = vec![0.0; h * w];
    let mut spread = err.clone();
    for k in 0..h * w {
        if g[k] == 1.0 {
            continue;
        }
        let (i, j) = ((k / w) as i64, (k % w) as i64);
        let mut best = (i64::MAX, 0);
        for &f in &fg {
            let (fi, fj) = ((f / w) as i64, (f % w) as i64);
            let d = (fi - i).pow(2) + (fj - j).pow(2);
            if d < best.0 {
                best = (d, f);
            }
        }
        dist[k] = (best.0 as f64).sqrt();
        spread[k] = err[best.1];
    }

    let sigma = 5.0f64;
    let mut kernel = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (a, row) in kernel.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (a as f64 - 3.0, b as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in kernel.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }

    let mut weighted = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let mut smoothed = 0.0;
            for (a, row) in kernel.iter().enumerate() {
                for (b, kv) in row.iter().enumerate() {
                    let (ii, jj) = (i as i64 + a as i64 - 3, j as i64 + b as i64 - 3);
                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                        smoothed += kv * spread[ii as usize * w + jj as usize];
                    }
                }
            }
            weighted[k] = if g[k] == 1.0 {
                err[k].min(smoothed)
            } else {
                err[k] * (2.0 - (0.5f64.ln() / 5.0 * dist[k]).exp())
            };
        }
    }
    let fg_total = fg.len() as f64;
    let fg_err: f64 = fg.iter().map(|&k| weighted[k]).sum();
    let bg_err: f64 = (0..h * w).filter(|&k| g[k] == 0.0).map(|k| weighted[k]).sum();
    let tp = fg_total - fg_err;
    let recall = 1.0 - fg_err / fg_total;
    let precision = if tp + bg_err == 0.0 { 0.0 } else { tp / (tp + bg_err) };
    f_beta(precision, recall)
}
