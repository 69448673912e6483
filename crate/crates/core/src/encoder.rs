//! Patch serialization and the pre-norm transformer encoder.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{LayerNorm, Linear, PROJECTION_INIT_STD};
use crate::param::{InitSpec, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub image_c: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    /// Apply a layer norm to the last layer's output.
    pub final_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_c: 3,
            image_h: 96,
            image_w: 96,
            patch_size: 16,
            embed_dim: 32,
            num_layers: 12,
            num_heads: 2,
            mlp_ratio: 4.0,
            final_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let s = self.patch_size;
        if s == 0 || self.image_h == 0 || self.image_w == 0 || self.image_c == 0 {
            return bad("image dimensions and patch size must be positive".into());
        }
        if !self.image_h.is_multiple_of(s) || !self.image_w.is_multiple_of(s) {
            return bad(format!(
                "patch size {s} does not divide image size {}x{}",
                self.image_h, self.image_w
            ));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 {
            return bad("num_layers must be positive".into());
        }
        if !self.mlp_ratio.is_finite() || self.mlp_ratio <= 0.0 || self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch_size, self.image_w / self.patch_size)
    }

    /// Token count `l = HW / s²`.
    pub fn seq_len(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Raw patch dimension `d = s²·C`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.image_c
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }
}

/// `[n, l, c]` token matrix with the patch grid it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Var,
    pub grid_h: usize,
    pub grid_w: usize,
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        [c, h, w] => Ok((1, c, h, w)),
        _ => Err(Error::arg(
            "patchify",
            format!("expected [n, c, h, w] image, got {shape:?}"),
        )),
    }
}

/// Splits images into non-overlapping `s×s` patches, row-major over the
/// patch grid, each flattened in (channel, row, column) order:
/// `[n, c, h, w] -> [n, l, s²·c]`.
pub fn patchify<T: Scalar>(image: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = image_dims(image.shape())?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::arg(
            "patchify",
            format!("patch size {s} does not divide image size {h}x{w}"),
        ));
    }
    let (gh, gw) = (h / s, w / s);
    let d = s * s * c;
    let src = image.data();
    let mut out = Vec::with_capacity(n * gh * gw * d);
    for b in 0..n {
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..c {
                    for y in 0..s {
                        let row = ((b * c + ch) * h + py * s + y) * w + px * s;
                        out.extend_from_slice(&src[row..row + s]);
                    }
                }
            }
        }
    }
    Tensor::new([n, gh * gw, d], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    patches: &Tensor<T>,
    channels: usize,
    s: usize,
    grid_h: usize,
    grid_w: usize,
) -> Result<Tensor<T>> {
    let shape = patches.shape();
    let d = s * s * channels;
    if shape.len() != 3 || shape[1] != grid_h * grid_w || shape[2] != d {
        return Err(Error::shape("unpatchify", shape, &[shape[0], grid_h * grid_w, d]));
    }
    let n = shape[0];
    let (h, w) = (grid_h * s, grid_w * s);
    let src = patches.data();
    let mut out = vec![T::zero(); n * channels * h * w];
    let mut at = 0;
    for b in 0..n {
        for py in 0..grid_h {
            for px in 0..grid_w {
                for ch in 0..channels {
                    for y in 0..s {
                        let row = ((b * channels + ch) * h + py * s + y) * w + px * s;
                        out[row..row + s].copy_from_slice(&src[at..at + s]);
                        at += s;
                    }
                }
            }
        }
    }
    Tensor::new([n, channels, h, w], out)
}

/// Serializes images into projected patch tokens.
pub fn serialize_patches<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    image: &Tensor<T>,
    patch_size: usize,
    projection: &Linear,
) -> Result<TokenSequence> {
    let (_, _, h, w) = image_dims(image.shape())?;
    let raw = patchify(image, patch_size)?;
    let raw = g.constant(raw);
    let tokens = projection.forward(g, ps, raw)?;
    Ok(TokenSequence {
        tokens,
        grid_h: h / patch_size,
        grid_w: w / patch_size,
    })
}

/// Reshapes `[n, l, c]` tokens into `[n, c, grid_h, grid_w]` feature maps.
pub fn deserialize<T: Scalar>(g: &mut Graph<T>, seq: &TokenSequence) -> Result<Var> {
    let shape = g.shape(seq.tokens).to_vec();
    if shape.len() != 3 || shape[1] != seq.grid_h * seq.grid_w {
        return Err(Error::arg(
            "deserialize",
            format!("tokens {shape:?} do not match a {}x{} grid", seq.grid_h, seq.grid_w),
        ));
    }
    let t = g.permute(seq.tokens, &[0, 2, 1])?;
    g.reshape(t, &[shape[0], shape[2], seq.grid_h, seq.grid_w])
}

/// Inverse of [`deserialize`]: `[n, c, h, w] -> [n, h·w, c]`.
pub fn serialize_feature<T: Scalar>(g: &mut Graph<T>, feature: Var) -> Result<TokenSequence> {
    let s = g.shape(feature).to_vec();
    if s.len() != 4 {
        return Err(Error::arg(
            "serialize_feature",
            format!("expected [n, c, h, w], got {s:?}"),
        ));
    }
    let t = g.reshape(feature, &[s[0], s[1], s[2] * s[3]])?;
    let tokens = g.permute(t, &[0, 2, 1])?;
    Ok(TokenSequence {
        tokens,
        grid_h: s[2],
        grid_w: s[3],
    })
}

/// Learnable `[l, c]` table added to every sequence of a batch.
#[derive(Clone, Debug)]
pub struct PositionalEmbedding {
    pub table: ParamId,
}

impl PositionalEmbedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        len: usize,
        dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let table = store.add(
            format!("{name}.table"),
            &[len, dim],
            InitSpec::TruncatedNormal {
                std: PROJECTION_INIT_STD,
            },
            rng,
        )?;
        Ok(Self { table })
    }
}

pub fn add_positional<T: Scalar>(
    g: &mut Graph<T>,
    ps: &ParamStore<T>,
    seq: &TokenSequence,
    pos: &PositionalEmbedding,
) -> Result<TokenSequence> {
    let table = g.param(ps, pos.table);
    let tokens = g.add_trailing(seq.tokens, table)?;
    Ok(TokenSequence { tokens, ..*seq })
}

/// Scaled dot-product self-attention. The key projection has no bias: it
/// would shift every score in a row by the same amount, which the softmax
/// cancels.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, false, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, true, rng)?,
            heads,
        })
    }

    fn split_heads<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        let x = g.reshape(x, &[n, l, self.heads, c / self.heads])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[n * self.heads, l, c / self.heads])
    }

    /// Returns the projected context and the `[n·heads, l, l]` attention.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        let (n, l, c) = (s[0], s[1], s[2]);
        let head_dim = c / self.heads;
        let q = self.query.forward(g, ps, x)?;
        let k = self.key.forward(g, ps, x)?;
        let v = self.value.forward(g, ps, x)?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let v = self.split_heads(g, v)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, T::lit(1.0 / (head_dim as f64).sqrt()));
        let attn = g.softmax_last(scores)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.reshape(ctx, &[n, self.heads, l, head_dim])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[n, l, c])?;
        Ok((self.output.forward(g, ps, ctx)?, attn))
    }
}

/// Linear, GELU, linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, ps, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, ps, h)
    }
}

/// `y = x + MSA(LN(x)); out = y + MLP(LN(y))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let c = cfg.embed_dim;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c, rng)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), c, cfg.num_heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c, rng)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), c, cfg.mlp_hidden(), rng)?,
        })
    }

    /// Returns the layer output and its attention probabilities.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: &TokenSequence,
    ) -> Result<(TokenSequence, Var)> {
        let h = self.norm1.forward(g, ps, x.tokens)?;
        let (a, attn) = self.attention.forward(g, ps, h)?;
        let y = g.add(x.tokens, a)?;
        let h = self.norm2.forward(g, ps, y)?;
        let m = self.mlp.forward(g, ps, h)?;
        let out = g.add(y, m)?;
        Ok((TokenSequence { tokens: out, ..*x }, attn))
    }
}

/// Every layer's output, first to last, and each layer's attention.
pub struct EncoderOutput {
    pub layers: Vec<TokenSequence>,
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub projection: Linear,
    pub position: PositionalEmbedding,
    pub layers: Vec<TransformerLayer>,
    pub final_norm: Option<LayerNorm>,
}

impl Encoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &EncoderConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        let projection = Linear::new(
            store,
            &format!("{name}.patch_embed"),
            config.patch_dim(),
            config.embed_dim,
            true,
            rng,
        )?;
        let position = PositionalEmbedding::new(
            store,
            &format!("{name}.pos_embed"),
            config.seq_len(),
            config.embed_dim,
            rng,
        )?;
        let layers = (0..config.num_layers)
            .map(|i| TransformerLayer::new(store, &format!("{name}.layer{}", i + 1), config, rng))
            .collect::<Result<_>>()?;
        let final_norm = if config.final_norm {
            Some(LayerNorm::new(
                store,
                &format!("{name}.final_norm"),
                config.embed_dim,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            projection,
            position,
            layers,
            final_norm,
        })
    }

    /// Serialized, position-embedded tokens that enter the first layer.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, images: &Tensor<T>) -> Result<TokenSequence> {
        let (_, c, h, w) = image_dims(images.shape())?;
        let cfg = &self.config;
        if (c, h, w) != (cfg.image_c, cfg.image_h, cfg.image_w) {
            return Err(Error::arg(
                "encode",
                format!(
                    "image is {c}x{h}x{w}, encoder expects {}x{}x{}",
                    cfg.image_c, cfg.image_h, cfg.image_w
                ),
            ));
        }
        let seq = serialize_patches(g, ps, images, cfg.patch_size, &self.projection)?;
        add_positional(g, ps, &seq, &self.position)
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, images: &Tensor<T>) -> Result<EncoderOutput> {
        let mut x = self.embed(g, ps, images)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, a) = layer.forward(g, ps, &x)?;
            layers.push(y);
            attention.push(a);
            x = y;
        }
        if let (Some(norm), Some(last)) = (&self.final_norm, layers.last_mut()) {
            last.tokens = norm.forward(g, ps, last.tokens)?;
        }
        Ok(EncoderOutput { layers, attention })
    }
}
