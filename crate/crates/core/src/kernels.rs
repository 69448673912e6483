//! Slice-level numeric routines shared by the forward and backward passes.
//!
//! Nothing here knows about the graph. Layouts are row-major throughout.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// Work (m·n·k multiply-adds) below which GEMM stays on the calling thread.
const PAR_GEMM_WORK: usize = 1 << 18;
const ROW_BLOCK: usize = 16;
const COL_BLOCK: usize = 256;

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

#[derive(Clone, Copy)]
struct SendConstPtr<T>(*const T);
unsafe impl<T> Send for SendConstPtr<T> {}
unsafe impl<T> Sync for SendConstPtr<T> {}

/// `C (m×n) = op(A)·op(B) (+ C if accumulate)`.
///
/// `A` is stored `m×k` row-major, or `k×m` when `a_t` is set (so the product
/// uses its transpose). Likewise `B` is `k×n`, or `n×k` when `b_t` is set.
/// Large products are split into fixed-size blocks of `C`; the block size
/// never depends on the thread count, so results are bit-identical for any
/// pool size.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "gemm: A buffer too small");
    assert!(b.len() >= k * n, "gemm: B buffer too small");
    assert!(c.len() >= m * n, "gemm: C buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_t {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if b_t {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    let ap = SendConstPtr(a.as_ptr());
    let bp = SendConstPtr(b.as_ptr());
    let cp = SendPtr(c.as_mut_ptr());
    let work = m * n * k;

    if work < PAR_GEMM_WORK || (m <= ROW_BLOCK && n <= COL_BLOCK) {
        // SAFETY: bounds were asserted above and the strides address an m×k,
        // k×n and m×n window of the respective buffers.
        unsafe {
            T::gemm_raw(m, k, n, ap.0, rsa, csa, bp.0, rsb, csb, beta, cp.0, n as isize, 1);
        }
        return;
    }

    if m >= n / 4 {
        let blocks = m.div_ceil(ROW_BLOCK);
        (0..blocks).into_par_iter().for_each(|blk| {
            let (ap, bp, cp) = (ap, bp, cp);
            let r0 = blk * ROW_BLOCK;
            let rows = ROW_BLOCK.min(m - r0);
            // SAFETY: each block addresses a disjoint set of rows of C and a
            // row window of A inside the asserted bounds.
            unsafe {
                T::gemm_raw(
                    rows,
                    k,
                    n,
                    ap.0.offset(r0 as isize * rsa),
                    rsa,
                    csa,
                    bp.0,
                    rsb,
                    csb,
                    beta,
                    cp.0.add(r0 * n),
                    n as isize,
                    1,
                );
            }
        });
    } else {
        let blocks = n.div_ceil(COL_BLOCK);
        (0..blocks).into_par_iter().for_each(|blk| {
            let (ap, bp, cp) = (ap, bp, cp);
            let c0 = blk * COL_BLOCK;
            let cols = COL_BLOCK.min(n - c0);
            // SAFETY: each block addresses a disjoint set of columns of C and
            // a column window of B inside the asserted bounds.
            unsafe {
                T::gemm_raw(
                    m,
                    k,
                    cols,
                    ap.0,
                    rsa,
                    csa,
                    bp.0.offset(c0 as isize * csb),
                    rsb,
                    csb,
                    beta,
                    cp.0.add(c0),
                    n as isize,
                    1,
                );
            }
        });
    }
}

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` (laid out as `shape`) into the axis order given by `perm`.
pub fn permute<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).fold(T::neg_infinity(), |m, j| m.max(x[at(j)]));
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                y[at(j)] /= total;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let dot: T = (0..len).map(|j| y[at(j)] * dy[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
    dx
}

/// Per-row normalization statistics for layer norm over the trailing axis.
pub struct RowStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm_forward<T: Scalar>(x: &[T], width: usize, gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, RowStats<T>) {
    let rows = x.len() / width;
    let w = T::from_usize(width).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut stats = RowStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().copied().sum::<T>() / w;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / w;
        let rstd = (var + eps).sqrt().recip();
        for j in 0..width {
            y[r * width + j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    (y, stats)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    width: usize,
    gamma: &[T],
    stats: &RowStats<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / width;
    let w = T::from_usize(width).unwrap();
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); width];
    let mut dbeta = vec![T::zero(); width];
    let mut xhat = vec![T::zero(); width];
    let mut dxhat = vec![T::zero(); width];
    for r in 0..rows {
        let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
        for j in 0..width {
            let i = r * width + j;
            xhat[j] = (x[i] - mean) * rstd;
            dxhat[j] = dy[i] * gamma[j];
            dgamma[j] += dy[i] * xhat[j];
            dbeta[j] += dy[i];
        }
        let sum_d: T = dxhat.iter().copied().sum();
        let sum_dx: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
        for j in 0..width {
            dx[r * width + j] = rstd * (dxhat[j] - sum_d / w - xhat[j] * sum_dx / w);
        }
    }
    (dx, dgamma, dbeta)
}

/// Unfolds one `[c, h, w]` image into a `[c·k·k, h·w]` patch matrix for a
/// stride-1 convolution with symmetric zero padding `k / 2`.
pub fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &x[ci * hw + sy as usize * w..ci * hw + (sy as usize + 1) * w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for xo in x_lo..x_hi {
                        dst[y * w + xo] = src_row[(xo as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates a patch-matrix gradient back onto the image.
pub fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx_out: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = ci * hw + sy as usize * w;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for xo in x_lo..x_hi {
                        dx_out[base + (xo as isize + dx) as usize] += src[y * w + xo];
                    }
                }
            }
        }
    }
}

/// One output coordinate of a bilinear resize: the two source taps and the
/// fractional weight of the upper one.
#[derive(Clone, Copy, Debug)]
pub struct Tap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

/// Half-pixel-centred bilinear taps (the `align_corners = false` convention).
pub fn bilinear_taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                frac: T::lit(frac),
            }
        })
        .collect()
}

/// Resizes `planes` stacked `[ih, iw]` planes to `[oh, ow]`.
///
/// Interpolates in lerp form `a + t·(b − a)` so constant inputs are reproduced
/// exactly and nonnegative inputs stay nonnegative.
pub fn resize_forward<T: Scalar>(x: &[T], planes: usize, (ih, iw): (usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    let ty = bilinear_taps::<T>(ih, oh);
    let tx = bilinear_taps::<T>(iw, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(p, dst)| {
        let src = &x[p * ih * iw..(p + 1) * ih * iw];
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &src[ry.lo * iw..(ry.lo + 1) * iw];
            let r1 = &src[ry.hi * iw..(ry.hi + 1) * iw];
            for (ox, rx) in tx.iter().enumerate() {
                let top = r0[rx.lo] + rx.frac * (r0[rx.hi] - r0[rx.lo]);
                let bot = r1[rx.lo] + rx.frac * (r1[rx.hi] - r1[rx.lo]);
                dst[oy * ow + ox] = top + ry.frac * (bot - top);
            }
        }
    });
    out
}

pub fn resize_backward<T: Scalar>(
    dy: &[T],
    planes: usize,
    (ih, iw): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps::<T>(ih, oh);
    let tx = bilinear_taps::<T>(iw, ow);
    let mut dx = vec![T::zero(); planes * ih * iw];
    dx.par_chunks_mut(ih * iw).enumerate().for_each(|(p, dst)| {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        for (oy, ry) in ty.iter().enumerate() {
            let wy1 = ry.frac;
            let wy0 = T::one() - wy1;
            for (ox, rx) in tx.iter().enumerate() {
                let wx1 = rx.frac;
                let wx0 = T::one() - wx1;
                let v = g[oy * ow + ox];
                dst[ry.lo * iw + rx.lo] += v * wy0 * wx0;
                dst[ry.lo * iw + rx.hi] += v * wy0 * wx1;
                dst[ry.hi * iw + rx.lo] += v * wy1 * wx0;
                dst[ry.hi * iw + rx.hi] += v * wy1 * wx1;
            }
        }
    });
    dx
}

/// Bin `n` of an adaptive pool from `len` rows to `bins` rows spans
/// `floor(n·len/bins) .. floor((n+1)·len/bins)`.
pub fn pool_bin(n: usize, len: usize, bins: usize) -> std::ops::Range<usize> {
    (n * len / bins)..((n + 1) * len / bins)
}

pub fn pool_seq_forward<T: Scalar>(x: &[T], batch: usize, len: usize, width: usize, bins: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * bins * width];
    for b in 0..batch {
        for n in 0..bins {
            let range = pool_bin(n, len, bins);
            let count = T::from_usize(range.len()).unwrap();
            let dst = &mut out[(b * bins + n) * width..(b * bins + n + 1) * width];
            for r in range {
                let src = &x[(b * len + r) * width..(b * len + r + 1) * width];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d /= count);
        }
    }
    out
}

pub fn pool_seq_backward<T: Scalar>(dy: &[T], batch: usize, len: usize, width: usize, bins: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * len * width];
    for b in 0..batch {
        for n in 0..bins {
            let range = pool_bin(n, len, bins);
            let count = T::from_usize(range.len()).unwrap();
            let src = &dy[(b * bins + n) * width..(b * bins + n + 1) * width];
            for r in range {
                let dst = &mut dx[(b * len + r) * width..(b * len + r + 1) * width];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s / count;
                }
            }
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
