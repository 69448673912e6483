//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in creation
//! order, which is already a topological order. [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients for every node that requires
//! them. One graph is built and traversed by one thread; parameters are
//! copied in from a shared, read-only [`ParamStore`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, RowStats};
use crate::param::{BufferId, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddTrailing(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_batched: bool,
        b_batched: bool,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var, usize),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: RowStats<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
        train: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
    },
    Resize(Var),
    PoolSeq(Var, usize),
    Bce {
        pred: Var,
        target: Tensor<T>,
        eps: T,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
    params: HashMap<ParamId, Var>,
    staged: Vec<(BufferId, Tensor<T>)>,
}

/// Gradients of one backward pass, retained for leaf nodes only.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new(Mode::Train)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            params: HashMap::new(),
            staged: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input: no gradient is tracked through it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Brings a stored parameter into the graph. Repeated calls return the
    /// same node, so shared parameters accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.variable(store.tensor(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Parameters used by this graph, in first-use order.
    pub fn param_vars(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        out.sort_by_key(|&(_, v)| v);
        out
    }

    /// Records a buffer value to commit after the step (running statistics).
    pub fn stage_buffer(&mut self, id: BufferId, value: Tensor<T>) {
        self.staged.push((id, value));
    }

    /// Writes staged buffer values into the store.
    pub fn commit_buffers(&mut self, store: &mut ParamStore<T>) {
        for (id, t) in self.staged.drain(..) {
            store.set_buffer(id, t);
        }
    }

    /// Smallest `|x|` over the inputs of every ReLU in the graph. Central
    /// differences that straddle a kink are meaningless, so gradient checks
    /// use this to stay clear of them.
    pub fn relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| v.abs()))
            .reduce(|a, b| a.min(b))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar {
                op: "backward",
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contrib) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `i` for its upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.zip_map(val(*b), "mul", |d, y| d * y)?));
                }
                if self.wants(*b) {
                    out.push((*b, g.zip_map(val(*a), "mul", |d, x| d * x)?));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                out.push((*a, g.map(|v| v * s)));
            }
            Op::AddTrailing(x, b) => {
                out.push((*x, g.clone()));
                if self.wants(*b) {
                    let bn = val(*b).numel();
                    let mut db = vec![T::zero(); bn];
                    for chunk in g.data().chunks(bn) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    out.push((*b, Tensor::new(val(*b).shape(), db)?));
                }
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                a_batched,
                b_batched,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (av, bv) = (val(*a).data(), val(*b).data());
                let gd = g.data();
                if self.wants(*a) {
                    let mut da = vec![T::zero(); val(*a).numel()];
                    for i in 0..batch {
                        let ai = if *a_batched { i * m * k } else { 0 };
                        let bi = if *b_batched { i * k * n } else { 0 };
                        let acc = !*a_batched && i > 0;
                        kernels::gemm(
                            m,
                            n,
                            k,
                            &gd[i * m * n..(i + 1) * m * n],
                            false,
                            &bv[bi..bi + k * n],
                            true,
                            &mut da[ai..ai + m * k],
                            acc,
                        );
                    }
                    out.push((*a, Tensor::new(val(*a).shape(), da)?));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); val(*b).numel()];
                    for i in 0..batch {
                        let ai = if *a_batched { i * m * k } else { 0 };
                        let bi = if *b_batched { i * k * n } else { 0 };
                        let acc = !*b_batched && i > 0;
                        kernels::gemm(
                            k,
                            m,
                            n,
                            &av[ai..ai + m * k],
                            true,
                            &gd[i * m * n..(i + 1) * m * n],
                            false,
                            &mut db[bi..bi + k * n],
                            acc,
                        );
                    }
                    out.push((*b, Tensor::new(val(*b).shape(), db)?));
                }
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (shape, data) = kernels::permute(g.data(), g.shape(), &inv);
                out.push((*x, Tensor::new(shape, data)?));
            }
            Op::Reshape(x) => out.push((*x, g.reshape(val(*x).shape())?)),
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = kernels::split_axis(g.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = val(*v).shape()[*axis];
                    if self.wants(*v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        out.push((*v, Tensor::new(val(*v).shape(), d)?));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = val(*x).shape();
                let (outer, total, inner) = kernels::split_axis(xs, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![T::zero(); val(*x).numel()];
                for o in 0..outer {
                    let dst = o * total * inner + start * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, Tensor::new(xs, d)?));
            }
            Op::Relu(x) => {
                out.push((
                    *x,
                    g.zip_map(val(*x), "relu", |d, v| if v > T::zero() { d } else { T::zero() })?,
                ));
            }
            Op::Sigmoid(x) => {
                out.push((*x, g.zip_map(&node.value, "sigmoid", |d, y| d * y * (T::one() - y))?));
            }
            Op::Gelu(x) => {
                out.push((*x, g.zip_map(val(*x), "gelu", |d, v| d * kernels::gelu_grad(v))?));
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = kernels::split_axis(g.shape(), *axis);
                let d = kernels::softmax_backward(node.value.data(), g.data(), outer, len, inner);
                out.push((*x, Tensor::new(g.shape(), d)?));
            }
            Op::Sum(x) => {
                let d = g.data()[0];
                out.push((*x, Tensor::full(val(*x).shape(), d)));
            }
            Op::Mean(x) => {
                let n = T::from_usize(val(*x).numel()).unwrap();
                let d = g.data()[0] / n;
                out.push((*x, Tensor::full(val(*x).shape(), d)));
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let xs = val(*x);
                let width = *xs.shape().last().unwrap();
                let (dx, dg, db) = kernels::layer_norm_backward(xs.data(), g.data(), width, val(*gamma).data(), stats);
                out.push((*x, Tensor::new(xs.shape(), dx)?));
                out.push((*gamma, Tensor::new(val(*gamma).shape(), dg)?));
                out.push((*beta, Tensor::new(val(*beta).shape(), db)?));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                train,
            } => {
                let xs = val(*x).shape();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let gam = val(*gamma).data();
                let gd = g.data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                let count = T::from_usize(n * hw).unwrap();
                for ch in 0..c {
                    let idx = |b: usize, p: usize| (b * c + ch) * hw + p;
                    let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
                    for b in 0..n {
                        for p in 0..hw {
                            let i = idx(b, p);
                            sum_d += gd[i];
                            sum_dx += gd[i] * xhat[i];
                        }
                    }
                    dg[ch] = sum_dx;
                    db[ch] = sum_d;
                    let scale = gam[ch] * rstd[ch];
                    for b in 0..n {
                        for p in 0..hw {
                            let i = idx(b, p);
                            dx[i] = if *train {
                                scale * (gd[i] - sum_d / count - xhat[i] * sum_dx / count)
                            } else {
                                scale * gd[i]
                            };
                        }
                    }
                }
                out.push((*x, Tensor::new(xs, dx)?));
                out.push((*gamma, Tensor::new([c], dg)?));
                out.push((*beta, Tensor::new([c], db)?));
            }
            Op::Conv2d { x, w, b, k } => {
                let xs = val(*x).shape();
                let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = val(*w).shape()[0];
                let k = *k;
                let (hw, kk) = (h * wd, cin * k * k);
                let wv = val(*w).data();
                let xv = val(*x).data();
                let gd = g.data();
                let want_x = self.wants(*x);
                let mut dx = vec![T::zero(); if want_x { xv.len() } else { 0 }];
                let mut dw = vec![T::zero(); wv.len()];
                for bi in 0..n {
                    let xb = &xv[bi * cin * hw..(bi + 1) * cin * hw];
                    let gb = &gd[bi * cout * hw..(bi + 1) * cout * hw];
                    let cols_owned;
                    let cols: &[T] = if k == 1 {
                        xb
                    } else {
                        cols_owned = kernels::im2col(xb, cin, h, wd, k);
                        &cols_owned
                    };
                    kernels::gemm(cout, hw, kk, gb, false, cols, true, &mut dw, bi > 0);
                    if want_x {
                        let dxb = &mut dx[bi * cin * hw..(bi + 1) * cin * hw];
                        if k == 1 {
                            kernels::gemm(kk, cout, hw, wv, true, gb, false, dxb, false);
                        } else {
                            let mut dcols = vec![T::zero(); kk * hw];
                            kernels::gemm(kk, cout, hw, wv, true, gb, false, &mut dcols, false);
                            kernels::col2im(&dcols, cin, h, wd, k, dxb);
                        }
                    }
                }
                if want_x {
                    out.push((*x, Tensor::new(xs, dx)?));
                }
                out.push((*w, Tensor::new(val(*w).shape(), dw)?));
                if let Some(b) = b {
                    let mut dbias = vec![T::zero(); cout];
                    for bi in 0..n {
                        for (co, d) in dbias.iter_mut().enumerate() {
                            let base = (bi * cout + co) * hw;
                            *d += gd[base..base + hw].iter().copied().sum::<T>();
                        }
                    }
                    out.push((*b, Tensor::new([cout], dbias)?));
                }
            }
            Op::Resize(x) => {
                let xs = val(*x).shape();
                let r = xs.len();
                let planes = xs[..r - 2].iter().product();
                let os = g.shape();
                let d = kernels::resize_backward(g.data(), planes, (xs[r - 2], xs[r - 1]), (os[r - 2], os[r - 1]));
                out.push((*x, Tensor::new(xs, d)?));
            }
            Op::PoolSeq(x, bins) => {
                let xs = val(*x).shape();
                let r = xs.len();
                let (len, width) = (xs[r - 2], xs[r - 1]);
                let batch = xs[..r - 2].iter().product();
                let d = kernels::pool_seq_backward(g.data(), batch, len, width, *bins);
                out.push((*x, Tensor::new(xs, d)?));
            }
            Op::Bce { pred, target, eps } => {
                let p = val(*pred);
                let n = T::from_usize(p.numel()).unwrap();
                let scale = g.data()[0] / n;
                let (lo, hi) = (*eps, T::one() - *eps);
                let d = p.zip_map(target, "bce", |p, t| {
                    if p < lo || p > hi {
                        T::zero()
                    } else {
                        scale * ((T::one() - t) / (T::one() - p) - t / p)
                    }
                })?;
                out.push((*pred, d));
            }
        }
        Ok(out)
    }
}
