//! Non-local token enhancement: adjacent encoder layers interact through a
//! shared query, tokens are projected onto a small vertex graph, refined by
//! one spectral graph convolution and projected back with a residual.

use crate::encoder::{deserialize, TokenSequence};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{LayerNorm, Linear, PROJECTION_INIT_STD};
use crate::param::{InitSpec, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NlTemConfig {
    pub embed_dim: usize,
    pub n_vertices: usize,
    /// One set of per-branch parameters serves both outputs.
    pub share_branches: bool,
}

impl NlTemConfig {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embed_dim {} must be even for the c/2 token projections",
                self.embed_dim
            )));
        }
        if self.n_vertices == 0 || self.n_vertices > seq_len {
            return Err(Error::Config(format!(
                "n_vertices {} must be in 1..={seq_len}",
                self.n_vertices
            )));
        }
        Ok(())
    }
}

/// Parameters private to one output branch.
#[derive(Clone, Debug)]
pub struct NlTemBranch {
    pub omega_v: Linear,
    pub omega_k: Linear,
    /// `[n_vertices, n_vertices]`, zero at init.
    pub adjacency: ParamId,
    /// `[c/2, c/2]`, acting on the feature axis.
    pub w_g: ParamId,
    /// `c/2 -> c`, bias-free so a zero graph branch leaves the residual exact.
    pub restore: Linear,
}

impl NlTemBranch {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &NlTemConfig, rng: &mut SeededRng) -> Result<Self> {
        let (c, half) = (cfg.embed_dim, cfg.embed_dim / 2);
        Ok(Self {
            omega_v: Linear::new(store, &format!("{name}.omega_v"), c, half, true, rng)?,
            omega_k: Linear::new(store, &format!("{name}.omega_k"), c, half, true, rng)?,
            adjacency: store.add(
                format!("{name}.adjacency"),
                &[cfg.n_vertices, cfg.n_vertices],
                InitSpec::Zeros,
                rng,
            )?,
            w_g: store.add(
                format!("{name}.w_g"),
                &[half, half],
                InitSpec::TruncatedNormal {
                    std: PROJECTION_INIT_STD,
                },
                rng,
            )?,
            restore: Linear::new(store, &format!("{name}.restore"), half, c, false, rng)?,
        })
    }
}

/// Every named intermediate of one branch, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct NlTemIntermediates {
    pub t_v: Var,
    pub t_k: Var,
    pub t_q: Var,
    pub t_q_w: Var,
    pub t_q_prime: Var,
    pub t_a: Var,
    pub t_g: Var,
    pub t_g_hat: Var,
}

/// `[n, c, grid_h, grid_w]` feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnhancedFeature {
    pub feature: Var,
}

#[derive(Clone, Debug)]
pub struct NlTem {
    pub config: NlTemConfig,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    /// `2c -> c/2`, shared by both branches.
    pub w_q: Linear,
    /// One entry when branches share parameters, two otherwise.
    pub branches: Vec<NlTemBranch>,
}

impl NlTem {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &NlTemConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let c = config.embed_dim;
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), c, rng)?;
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), c, rng)?;
        let w_q = Linear::new(store, &format!("{name}.w_q"), 2 * c, c / 2, true, rng)?;
        let count = if config.share_branches { 1 } else { 2 };
        let branches = (0..count)
            .map(|i| NlTemBranch::new(store, &format!("{name}.branch{}", i + 1), config, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            norm1,
            norm2,
            w_q,
            branches,
        })
    }

    pub fn branch(&self, i: usize) -> &NlTemBranch {
        &self.branches[i.min(self.branches.len() - 1)]
    }

    /// Layer-normalizes both inputs and concatenates them on the feature
    /// axis. Returns `(T_q, LN(t1), LN(t2))`.
    pub fn fuse_query<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        t1: &TokenSequence,
        t2: &TokenSequence,
    ) -> Result<(Var, Var, Var)> {
        if g.shape(t1.tokens) != g.shape(t2.tokens) {
            return Err(Error::shape("fuse_query", g.shape(t1.tokens), g.shape(t2.tokens)));
        }
        let n1 = self.norm1.forward(g, ps, t1.tokens)?;
        let n2 = self.norm2.forward(g, ps, t2.tokens)?;
        let t_q = g.concat(&[n1, n2], 2)?;
        Ok((t_q, n1, n2))
    }

    /// Runs one branch from its normalized tokens and the fused query.
    pub fn branch_forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        which: usize,
        normalized: Var,
        t_q: Var,
        original: &TokenSequence,
    ) -> Result<(EnhancedFeature, NlTemIntermediates)> {
        let branch = self.branch(which);
        let t_v = branch.omega_v.forward(g, ps, normalized)?;
        let t_k = branch.omega_k.forward(g, ps, normalized)?;
        let (t_q_prime, t_q_w) = weighted_pool(g, ps, &self.w_q, t_k, t_q, self.config.n_vertices)?;
        let t_a = attention_map(g, t_q_prime, t_k)?;
        let t_g = graph_project(g, t_v, t_a)?;
        let a = g.param(ps, branch.adjacency);
        let w_g = g.param(ps, branch.w_g);
        let t_g_hat = gcn(g, t_g, a, w_g)?;
        let out = reproject_and_deserialize(g, ps, t_g_hat, t_a, original, &branch.restore)?;
        let inter = NlTemIntermediates {
            t_v,
            t_k,
            t_q,
            t_q_w,
            t_q_prime,
            t_a,
            t_g,
            t_g_hat,
        };
        Ok((out, inter))
    }

    /// Enhanced features for both inputs with every intermediate.
    #[allow(clippy::type_complexity)]
    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        t1: &TokenSequence,
        t2: &TokenSequence,
    ) -> Result<(
        (EnhancedFeature, NlTemIntermediates),
        (EnhancedFeature, NlTemIntermediates),
    )> {
        if (t1.grid_h, t1.grid_w) != (t2.grid_h, t2.grid_w) {
            return Err(Error::arg("nl_tem", "inputs come from different token grids"));
        }
        let (t_q, n1, n2) = self.fuse_query(g, ps, t1, t2)?;
        let first = self.branch_forward(g, ps, 0, n1, t_q, t1)?;
        let second = self.branch_forward(g, ps, 1, n2, t_q, t2)?;
        Ok((first, second))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        t1: &TokenSequence,
        t2: &TokenSequence,
    ) -> Result<(EnhancedFeature, EnhancedFeature)> {
        let ((o1, _), (o2, _)) = self.forward_traced(g, ps, t1, t2)?;
        Ok((o1, o2))
    }
}

/// `P(T_k ⊙ softmax(w_q(T_q)))`: the feature-axis softmax weight map gates
/// the keys, which are then average-pooled from `l` rows to `n_vertices`.
/// Returns `(T_q', weight map)`.
pub fn weighted_pool<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    w_q: &Linear,
    t_k: Var,
    t_q: Var,
    n_vertices: usize,
) -> Result<(Var, Var)> {
    let logits = w_q.forward(g, ps, t_q)?;
    let weights = g.softmax_last(logits)?;
    let gated = g.mul(t_k, weights)?;
    let pooled = g.adaptive_avg_pool_seq(gated, n_vertices)?;
    Ok((pooled, weights))
}

/// `softmax(T_q' T_kᵀ)` over the token axis: `[.., n_v, l]`.
pub fn attention_map<T: Scalar>(g: &mut Graph<T>, t_q_prime: Var, t_k: Var) -> Result<Var> {
    let kt = g.transpose(t_k)?;
    let scores = g.matmul(t_q_prime, kt)?;
    g.softmax_last(scores)
}

/// `T_a T_v`: each vertex is the attention-weighted mean of token features.
pub fn graph_project<T: Scalar>(g: &mut Graph<T>, t_v: Var, t_a: Var) -> Result<Var> {
    g.matmul(t_a, t_v)
}

/// `ReLU((I - A) T_g w_g)`.
pub fn gcn<T: Scalar>(g: &mut Graph<T>, t_g: Var, a: Var, w_g: Var) -> Result<Var> {
    let a_shape = g.shape(a).to_vec();
    if a_shape.len() != 2 || a_shape[0] != a_shape[1] {
        return Err(Error::arg("gcn", format!("adjacency must be square, got {a_shape:?}")));
    }
    let eye = g.constant(Tensor::eye(a_shape[0]));
    let laplacian = g.sub(eye, a)?;
    let mixed = g.matmul(laplacian, t_g)?;
    let out = g.matmul(mixed, w_g)?;
    Ok(g.relu(out))
}

/// `D(restore(T_aᵀ T̂_g) + T_original)`.
pub fn reproject_and_deserialize<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    t_g_hat: Var,
    t_a: Var,
    original: &TokenSequence,
    restore: &Linear,
) -> Result<EnhancedFeature> {
    let at = g.transpose(t_a)?;
    let back = g.matmul(at, t_g_hat)?;
    let lifted = restore.forward(g, ps, back)?;
    let tokens = g.add(lifted, original.tokens)?;
    let feature = deserialize(g, &TokenSequence { tokens, ..*original })?;
    Ok(EnhancedFeature { feature })
}
