//! Differentiable operations recorded on a [`Graph`].

use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-6;
/// Batch-norm epsilon.
pub const BATCH_NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
/// Probability clamp applied before the logarithms of the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Running mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        self.push(out, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |v| v * s, Op::Scale(a, s))
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x`
    /// (bias rows, positional tables shared across a batch).
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::shape("add_trailing", xs, bs));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(bv.len()) {
            for (o, &v) in chunk.iter_mut().zip(bv) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddTrailing(x, b), &[x, b]))
    }

    /// Matrix product over the last two axes.
    ///
    /// Operands are rank 2 or rank 3; a rank-3 operand carries a batch axis,
    /// and a rank-2 operand is shared across the other side's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("matmul", &sa, &sb);
        if !(2..=3).contains(&sa.len()) || !(2..=3).contains(&sb.len()) {
            return Err(bad());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(bad());
        }
        let (batch, m_eff, a_batched, b_batched, out_shape) = match (sa.len(), sb.len()) {
            (2, 2) => (1, m, false, false, vec![m, n]),
            // A shared right operand folds the batch into the rows.
            (3, 2) => (1, sa[0] * m, false, false, vec![sa[0], m, n]),
            (2, 3) => (sb[0], m, false, true, vec![sb[0], m, n]),
            _ => {
                if sa[0] != sb[0] {
                    return Err(bad());
                }
                (sa[0], m, true, true, vec![sa[0], m, n])
            }
        };
        let mut c = vec![T::zero(); batch * m_eff * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                let ai = if a_batched { i * m_eff * k } else { 0 };
                let bi = if b_batched { i * k * n } else { 0 };
                kernels::gemm(
                    m_eff,
                    k,
                    n,
                    &av[ai..ai + m_eff * k],
                    false,
                    &bv[bi..bi + k * n],
                    false,
                    &mut c[i * m_eff * n..(i + 1) * m_eff * n],
                    false,
                );
            }
        }
        let op = Op::MatMul {
            a,
            b,
            batch,
            m: m_eff,
            k,
            n,
            a_batched,
            b_batched,
        };
        Ok(self.push(Tensor::new(out_shape, c)?, op, &[a, b]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::arg(
                "permute",
                format!("{perm:?} is not a permutation of rank {}", shape.len()),
            ));
        }
        let (s, d) = kernels::permute(self.value(x).data(), shape, perm);
        Ok(self.push(Tensor::new(s, d)?, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::arg("concat", "no operands"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let agrees =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                data.extend_from_slice(&self.value(v).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::InvalidAxis {
                op: "slice",
                axis,
                rank: xs.len(),
            });
        }
        if start >= end || end > xs[axis] {
            return Err(Error::arg(
                "slice",
                format!("range {start}..{end} outside axis of length {}", xs[axis]),
            ));
        }
        let (outer, total, inner) = kernels::split_axis(&xs, axis);
        let len = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = o * total * inner + start * inner;
            data.extend_from_slice(&src[b..b + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let y = kernels::softmax_forward(self.value(x).data(), outer, len, inner);
        Ok(self.push(Tensor::new(shape, y)?, Op::Softmax(x, axis), &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        self.softmax(x, r - 1)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let width = *self.shape(x).last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [width] {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let (y, stats) = kernels::layer_norm_forward(
            self.value(x).data(),
            width,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::lit(LAYER_NORM_EPS),
        );
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::LayerNorm { x, gamma, beta, stats },
            &[x, gamma, beta],
        ))
    }

    /// Per-channel batch normalization of an `[n, c, h, w]` tensor.
    ///
    /// In training mode the batch statistics normalize the input and the
    /// updated running statistics are returned; in evaluation mode the given
    /// running statistics are used and nothing is returned.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats<T>,
    ) -> Result<(Var, Option<RunningStats<T>>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::arg("batch_norm2d", format!("expected [n, c, h, w], got {xs:?}")));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        for p in [
            self.shape(gamma),
            self.shape(beta),
            running.mean.shape(),
            running.var.shape(),
        ] {
            if p != [c] {
                return Err(Error::shape("batch_norm2d", &xs, p));
            }
        }
        let train = self.is_training();
        let eps = T::lit(BATCH_NORM_EPS);
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let count = n * hw;
        let mut y = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); c];
        let mut new_mean = running.mean.clone();
        let mut new_var = running.var.clone();
        let momentum = T::lit(BATCH_NORM_MOMENTUM);
        for ch in 0..c {
            let idx = |b: usize, p: usize| (b * c + ch) * hw + p;
            let (mean, var) = if train {
                let mut s = T::zero();
                for b in 0..n {
                    for p in 0..hw {
                        s += xv[idx(b, p)];
                    }
                }
                let mean = s / T::from_usize(count).unwrap();
                let mut v = T::zero();
                for b in 0..n {
                    for p in 0..hw {
                        let d = xv[idx(b, p)] - mean;
                        v += d * d;
                    }
                }
                let biased = v / T::from_usize(count).unwrap();
                let unbiased = if count > 1 {
                    v / T::from_usize(count - 1).unwrap()
                } else {
                    biased
                };
                let rm = &mut new_mean.data_mut()[ch];
                *rm = (T::one() - momentum) * *rm + momentum * mean;
                let rv = &mut new_var.data_mut()[ch];
                *rv = (T::one() - momentum) * *rv + momentum * unbiased;
                (mean, biased)
            } else {
                (running.mean.data()[ch], running.var.data()[ch])
            };
            let r = (var + eps).sqrt().recip();
            rstd[ch] = r;
            for b in 0..n {
                for p in 0..hw {
                    let i = idx(b, p);
                    xhat[i] = (xv[i] - mean) * r;
                    y[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let var = self.push(
            Tensor::new(xs, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                train,
            },
            &[x, gamma, beta],
        );
        let stats = train.then_some(RunningStats {
            mean: new_mean,
            var: new_var,
        });
        Ok((var, stats))
    }

    /// Stride-1 convolution with "same" zero padding; `w` is `[cout, cin, k, k]`
    /// with odd `k`, `b` an optional `[cout]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[2].is_multiple_of(2) {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        if xs[1] != ws[1] {
            return Err(Error::arg(
                "conv2d",
                format!("input has {} channels but the kernel expects {}", xs[1], ws[1]),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape("conv2d", &ws, self.shape(b)));
            }
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        let hw = h * wd;
        let mut y = vec![T::zero(); n * cout * hw];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bias = b.map(|b| self.value(b).data());
            for bi in 0..n {
                let xb = &xv[bi * cin * hw..(bi + 1) * cin * hw];
                let yb = &mut y[bi * cout * hw..(bi + 1) * cout * hw];
                if let Some(bias) = bias {
                    for (co, &bv) in bias.iter().enumerate() {
                        yb[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = bv);
                    }
                }
                if k == 1 {
                    kernels::gemm(cout, cin, hw, wv, false, xb, false, yb, bias.is_some());
                } else {
                    let cols = kernels::im2col(xb, cin, h, wd, k);
                    kernels::gemm(cout, cin * k * k, hw, wv, false, &cols, false, yb, bias.is_some());
                }
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new([n, cout, h, wd], y)?, Op::Conv2d { x, w, b, k }, &inputs))
    }

    /// Bilinear resize of the last two axes (half-pixel centres).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let r = xs.len();
        if r < 2 || out_h == 0 || out_w == 0 {
            return Err(Error::arg(
                "resize_bilinear",
                format!("cannot resize {xs:?} to {out_h}x{out_w}"),
            ));
        }
        let planes = xs[..r - 2].iter().product();
        let y = kernels::resize_forward(self.value(x).data(), planes, (xs[r - 2], xs[r - 1]), (out_h, out_w));
        let mut shape = xs;
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        Ok(self.push(Tensor::new(shape, y)?, Op::Resize(x), &[x]))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let r = xs.len();
        if r < 2 {
            return Err(Error::arg("upsample2x", format!("rank {r} has no spatial axes")));
        }
        let (h, w) = (xs[r - 2], xs[r - 1]);
        self.resize_bilinear(x, 2 * h, 2 * w)
    }

    /// Averages contiguous bins of rows: `[.., l, d] -> [.., bins, d]`.
    pub fn adaptive_avg_pool_seq(&mut self, x: Var, bins: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let r = xs.len();
        if r < 2 {
            return Err(Error::arg(
                "adaptive_avg_pool_seq",
                format!("rank {r} has no sequence axis"),
            ));
        }
        let (len, width) = (xs[r - 2], xs[r - 1]);
        if bins == 0 || bins > len {
            return Err(Error::arg(
                "adaptive_avg_pool_seq",
                format!("cannot pool {len} rows into {bins} bins"),
            ));
        }
        let batch = xs[..r - 2].iter().product();
        let y = kernels::pool_seq_forward(self.value(x).data(), batch, len, width, bins);
        let mut shape = xs;
        shape[r - 2] = bins;
        Ok(self.push(Tensor::new(shape, y)?, Op::PoolSeq(x, bins), &[x]))
    }

    /// Mean binary cross-entropy of probabilities against targets in `[0, 1]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape("bce", p.shape(), target.shape()));
        }
        let eps = T::lit(BCE_EPS);
        let (lo, hi) = (eps, T::one() - eps);
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                // NaN passes through so a diverged model yields a NaN loss.
                let p = if p.is_nan() { p } else { p.max(lo).min(hi) };
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum();
        let loss = total / T::from_usize(p.numel()).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.clone(),
                eps,
            },
            &[pred],
        ))
    }
}
