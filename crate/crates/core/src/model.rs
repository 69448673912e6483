//! The assembled network and its ablation variants.

use std::fmt;
use std::str::FromStr;

use crate::encoder::{deserialize, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::fsd::{Fsd, FsdConfig, NUM_INPUTS};
use crate::graph::{Graph, Var};
use crate::loss::{ensure_binary, total_loss};
use crate::nl_tem::{NlTem, NlTemConfig};
use crate::nn::Conv2d;
use crate::param::ParamStore;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// All encoder layers, concatenated and collapsed by one 1×1 conv.
    Baseline,
    /// Encoder layers decoded by the shrinkage decoder.
    Decoder,
    /// Encoder layers enhanced pairwise, then decoded.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Decoder, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "b12",
            Variant::Decoder => "b12+d",
            Variant::Full => "b12+d+t",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected b12, b12+d or b12+d+t)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FspnetConfig {
    pub encoder: EncoderConfig,
    pub n_vertices: usize,
    pub decoder_width: usize,
    pub variant: Variant,
    pub share_nl_tem_branches: bool,
}

impl Default for FspnetConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            n_vertices: 16,
            decoder_width: 32,
            variant: Variant::Full,
            share_nl_tem_branches: false,
        }
    }
}

impl FspnetConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.variant != Variant::Baseline && self.encoder.num_layers != NUM_INPUTS {
            return Err(Error::Config(format!(
                "the decoder needs {NUM_INPUTS} encoder layers, got {}",
                self.encoder.num_layers
            )));
        }
        if self.variant == Variant::Full {
            self.nl_tem().validate(self.encoder.seq_len())?;
        }
        if self.decoder_width == 0 {
            return Err(Error::Config("decoder_width must be positive".into()));
        }
        Ok(())
    }

    fn nl_tem(&self) -> NlTemConfig {
        NlTemConfig {
            embed_dim: self.encoder.embed_dim,
            n_vertices: self.n_vertices,
            share_branches: self.share_nl_tem_branches,
        }
    }
}

pub struct ModelOutput {
    /// Probability maps at image resolution, `[n, 1, H, W]`, shallow to
    /// deep; the last is the model's prediction.
    pub predictions: Vec<Var>,
    /// Lateral logits at their native resolution.
    pub logits: Vec<Var>,
    /// AIM invocations during this pass.
    pub aim_calls: usize,
}

impl ModelOutput {
    pub fn prediction(&self) -> Var {
        *self.predictions.last().expect("at least one prediction")
    }
}

#[derive(Clone, Debug)]
pub struct Fspnet {
    pub config: FspnetConfig,
    pub encoder: Encoder,
    pub nl_tems: Vec<NlTem>,
    pub decoder: Option<Fsd>,
    pub baseline_head: Option<Conv2d>,
}

impl Fspnet {
    /// Registers every parameter in `store`, drawing initial values from
    /// `rng` in a fixed order.
    pub fn new<T: Scalar>(config: &FspnetConfig, store: &mut ParamStore<T>, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(store, "encoder", &config.encoder, rng)?;
        let c = config.encoder.embed_dim;
        let nl_tems = if config.variant == Variant::Full {
            (1..=NUM_INPUTS / 2)
                .map(|j| NlTem::new(store, &format!("nl_tem{j}"), &config.nl_tem(), rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let (decoder, baseline_head) = match config.variant {
            Variant::Baseline => {
                let inputs = c * config.encoder.num_layers;
                (
                    None,
                    Some(Conv2d::new(store, "baseline_head", inputs, 1, 1, true, true, rng)?),
                )
            }
            _ => {
                let fsd = FsdConfig {
                    in_channels: c,
                    width: config.decoder_width,
                };
                (Some(Fsd::new(store, "decoder", &fsd, rng)?), None)
            }
        };
        Ok(Self {
            config: config.clone(),
            encoder,
            nl_tems,
            decoder,
            baseline_head,
        })
    }

    /// The twelve decoder inputs `F0_1..F0_12`, `[n, c, gh, gw]` each.
    pub fn decoder_inputs<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        images: &Tensor<T>,
    ) -> Result<Vec<Var>> {
        let enc = self.encoder.encode(g, ps, images)?;
        if self.nl_tems.is_empty() {
            return enc.layers.iter().map(|s| deserialize(g, s)).collect();
        }
        let mut out = Vec::with_capacity(enc.layers.len());
        for (pair, tem) in enc.layers.chunks(2).zip(&self.nl_tems) {
            let (a, b) = tem.forward(g, ps, &pair[0], &pair[1])?;
            out.push(a.feature);
            out.push(b.feature);
        }
        Ok(out)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, images: &Tensor<T>) -> Result<ModelOutput> {
        let (h, w) = (self.config.encoder.image_h, self.config.encoder.image_w);
        if let Some(head) = &self.baseline_head {
            let enc = self.encoder.encode(g, ps, images)?;
            let maps = enc
                .layers
                .iter()
                .map(|s| deserialize(g, s))
                .collect::<Result<Vec<_>>>()?;
            let stacked = g.concat(&maps, 1)?;
            let logits = head.forward(g, ps, stacked)?;
            let up = g.resize_bilinear(logits, h, w)?;
            let p = g.sigmoid(up);
            return Ok(ModelOutput {
                predictions: vec![p],
                logits: vec![logits],
                aim_calls: 0,
            });
        }
        let decoder = self.decoder.as_ref().expect("decoder variants carry an FSD");
        let inputs = self.decoder_inputs(g, ps, images)?;
        let out = decoder.decode(g, ps, &inputs, h, w)?;
        Ok(ModelOutput {
            predictions: out.predictions.iter().map(|p| p.probability).collect(),
            logits: out.predictions.iter().map(|p| p.logits).collect(),
            aim_calls: out.aim_calls,
        })
    }

    /// Training objective: the weighted lateral loss for decoder variants,
    /// plain BCE for the baseline.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<T>, out: &ModelOutput, masks: &Tensor<T>) -> Result<Var> {
        if out.predictions.len() == 1 {
            ensure_binary(masks)?;
            g.bce(out.predictions[0], masks)
        } else {
            total_loss(g, &out.predictions, masks)
        }
    }
}
