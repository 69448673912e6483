//! Feature shrinkage decoder.
//!
//! Twelve decoder inputs are merged pairwise by adjacent interaction modules
//! (AIMs) in four layers of 6, 3, 2 and 1 AIMs. Inside a layer the AIMs run
//! from the highest pair index down, each handing its same-layer pass
//! feature `dF` to the next; every AIM also emits a 2×-upsampled feature
//! for the following layer. The last AIM of each layer feeds a lateral
//! prediction head.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Cbr, Conv2d};
use crate::param::ParamStore;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// AIMs per decoder layer.
pub const AIM_COUNTS: [usize; 4] = [6, 3, 2, 1];
/// Decoder inputs the schedule is defined for.
pub const NUM_INPUTS: usize = 12;

/// A feature in the decoder dataflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    /// `F^layer_index`; layer 0 holds the decoder inputs, 1-based index.
    Level { layer: usize, index: usize },
    /// `dF^layer_n`, the same-layer pass output of an AIM.
    Pass { layer: usize, n: usize },
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Feature::Level { layer, index } => write!(f, "F{layer}_{index}"),
            Feature::Pass { layer, n } => write!(f, "dF{layer}_{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AimSpec {
    /// 1-based position in execution order.
    pub id: usize,
    pub layer: usize,
    /// Pair index within the layer, counting down from the layer's AIM count.
    pub n: usize,
    pub f_i: Feature,
    pub f_im1: Feature,
    /// Pass feature of the preceding AIM in the same layer.
    pub prev: Option<Feature>,
    pub pass_out: Feature,
    pub next_out: Feature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeSchedule {
    pub aim_counts: Vec<usize>,
    /// In execution order.
    pub aims: Vec<AimSpec>,
}

/// Builds the fixed 4-layer wiring. Within layer `i` with `m` AIMs and `k`
/// available features, AIM `n` pairs `(F_hi, F_hi-1)` with
/// `hi = min(2n, k)`; the clamp only binds in layer 2, where three features
/// feed two AIMs and `F_2` is read by both.
pub fn build_schedule(num_inputs: usize) -> Result<DecodeSchedule> {
    if num_inputs != NUM_INPUTS {
        return Err(Error::arg(
            "build_schedule",
            format!("the decoder wiring is defined for {NUM_INPUTS} inputs, got {num_inputs}"),
        ));
    }
    let mut aims = Vec::with_capacity(AIM_COUNTS.iter().sum());
    let mut available = num_inputs;
    for (layer, &m) in AIM_COUNTS.iter().enumerate() {
        let mut prev = None;
        for n in (1..=m).rev() {
            let hi = (2 * n).min(available);
            let pass_out = Feature::Pass { layer, n };
            aims.push(AimSpec {
                id: aims.len() + 1,
                layer,
                n,
                f_i: Feature::Level { layer, index: hi },
                f_im1: Feature::Level { layer, index: hi - 1 },
                prev,
                pass_out,
                next_out: Feature::Level {
                    layer: layer + 1,
                    index: n,
                },
            });
            prev = Some(pass_out);
        }
        available = m;
    }
    Ok(DecodeSchedule {
        aim_counts: AIM_COUNTS.to_vec(),
        aims,
    })
}

impl DecodeSchedule {
    pub fn num_layers(&self) -> usize {
        self.aim_counts.len()
    }

    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &AimSpec> {
        self.aims.iter().filter(move |a| a.layer == layer)
    }

    /// The AIM whose upsampled output feeds layer `layer`'s lateral head.
    pub fn lateral_source(&self, layer: usize) -> Option<&AimSpec> {
        self.layer(layer).last()
    }

    /// Checks the dataflow: every read is produced earlier or is a decoder
    /// input, nothing is produced twice, and every decoder input is read
    /// exactly once.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::arg("decode_schedule", msg));
        let mut produced: HashMap<Feature, usize> = HashMap::new();
        let mut input_reads = [0usize; NUM_INPUTS];
        for aim in &self.aims {
            let reads = [Some(aim.f_i), Some(aim.f_im1), aim.prev];
            for f in reads.into_iter().flatten() {
                match f {
                    Feature::Level { layer: 0, index } if (1..=NUM_INPUTS).contains(&index) => {
                        input_reads[index - 1] += 1
                    }
                    _ if produced.contains_key(&f) => {}
                    _ => return bad(format!("AIM {} reads {f} before it is produced", aim.id)),
                }
            }
            for f in [aim.pass_out, aim.next_out] {
                if produced.insert(f, aim.id).is_some() {
                    return bad(format!("{f} is produced twice"));
                }
            }
        }
        if let Some(i) = input_reads.iter().position(|&c| c != 1) {
            return bad(format!("input F0_{} is read {} times", i + 1, input_reads[i]));
        }
        Ok(())
    }

    /// Lengths of the `dF` chains, one per layer.
    pub fn chain_lengths(&self) -> Vec<usize> {
        (0..self.num_layers())
            .map(|layer| {
                let mut len = 0;
                let mut expect = None;
                for aim in self.layer(layer) {
                    if aim.prev != expect {
                        break;
                    }
                    len += 1;
                    expect = Some(aim.pass_out);
                }
                len
            })
            .collect()
    }

    /// Human-readable wiring table. With a token grid, the native lateral
    /// resolution of each layer is listed as well.
    pub fn dump(&self, grid: Option<(usize, usize)>) -> String {
        let mut out = String::new();
        let layers = self.aim_counts.len();
        let _ = writeln!(
            out,
            "layers: {layers}  aims: {}  per-layer: {:?}",
            self.aims.len(),
            self.aim_counts
        );
        let _ = writeln!(
            out,
            "{:>3}  {:>5}  {:>2}  {:<7} {:<7} {:<7} {:<7} {:<7}",
            "aim", "layer", "n", "f_i", "f_i-1", "prev", "pass", "next"
        );
        for a in &self.aims {
            let prev = a.prev.map_or_else(|| "-".to_string(), |f| f.to_string());
            let _ = writeln!(
                out,
                "{:>3}  {:>5}  {:>2}  {:<7} {:<7} {:<7} {:<7} {:<7}",
                a.id,
                a.layer,
                a.n,
                a.f_i.to_string(),
                a.f_im1.to_string(),
                prev,
                a.pass_out.to_string(),
                a.next_out.to_string()
            );
        }
        for layer in 0..self.num_layers() {
            if let Some(src) = self.lateral_source(layer) {
                let _ = write!(out, "P{layer} <- head({}) from aim {}", src.next_out, src.id);
                if let Some((h, w)) = grid {
                    let scale = 1 << (layer + 1);
                    let _ = write!(out, "  native {}x{}", h * scale, w * scale);
                }
                out.push('\n');
            }
        }
        out
    }
}

/// AIMs needed when every adjacent pair is merged at every level until one
/// feature remains (an overlapping pyramid): `n(n-1)/2`.
pub fn overlap_pyramid_aim_count(num_inputs: usize) -> usize {
    num_inputs * num_inputs.saturating_sub(1) / 2
}

/// Adjacent interaction module.
#[derive(Clone, Debug)]
pub struct Aim {
    pub cbr_fuse1: Cbr,
    pub cbr_fuse2: Cbr,
    pub cbr_out: Cbr,
    pub takes_prev: bool,
}

impl Aim {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        takes_prev: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let first_in = if takes_prev { 2 * width } else { width };
        Ok(Self {
            cbr_fuse1: Cbr::new(store, &format!("{name}.fuse1"), first_in, width, rng)?,
            cbr_fuse2: Cbr::new(store, &format!("{name}.fuse2"), 2 * width, width, rng)?,
            cbr_out: Cbr::new(store, &format!("{name}.out"), width, width, rng)?,
            takes_prev,
        })
    }

    /// `f_p = CBR(Cat(CBR(Cat(f_prev, f_i)), f_im1))`, `f_out = Up(CBR(f_p))`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        f_prev: Option<Var>,
        f_i: Var,
        f_im1: Var,
    ) -> Result<(Var, Var)> {
        let spatial = |g: &Graph<T>, v: Var| g.shape(v).get(2..).map(<[usize]>::to_vec);
        let reference = spatial(g, f_i);
        for v in [Some(f_im1), f_prev].into_iter().flatten() {
            if spatial(g, v) != reference {
                return Err(Error::shape("aim", g.shape(f_i), g.shape(v)));
            }
        }
        if f_prev.is_some() != self.takes_prev {
            return Err(Error::arg(
                "aim",
                if self.takes_prev {
                    "this AIM expects a pass feature"
                } else {
                    "this AIM is the first of its layer and takes no pass feature"
                },
            ));
        }
        let first = match f_prev {
            Some(p) => g.concat(&[p, f_i], 1)?,
            None => f_i,
        };
        let h = self.cbr_fuse1.forward(g, ps, first)?;
        let h = g.concat(&[h, f_im1], 1)?;
        let f_p = self.cbr_fuse2.forward(g, ps, h)?;
        let o = self.cbr_out.forward(g, ps, f_p)?;
        let f_out = g.upsample2x(o)?;
        Ok((f_p, f_out))
    }
}

/// Lateral prediction for one decoder layer.
#[derive(Clone, Copy, Debug)]
pub struct LateralPrediction {
    /// `[n, 1, h, w]` at the layer's native resolution.
    pub logits: Var,
    /// `[n, 1, H, W]`: sigmoid of the logits, resized to the target.
    pub probability: Var,
}

/// 1×1 convolution to one channel, zero-initialized so an untrained head
/// predicts 0.5 everywhere.
#[derive(Clone, Debug)]
pub struct LateralHead {
    pub conv: Conv2d,
}

impl LateralHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, name, width, 1, 1, true, true, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        feature: Var,
        target_h: usize,
        target_w: usize,
    ) -> Result<LateralPrediction> {
        let logits = self.conv.forward(g, ps, feature)?;
        let p = g.sigmoid(logits);
        let probability = g.resize_bilinear(p, target_h, target_w)?;
        Ok(LateralPrediction { logits, probability })
    }
}

#[derive(Clone, Debug)]
pub struct FsdConfig {
    /// Channels of the incoming enhanced features.
    pub in_channels: usize,
    /// Decoder width `d_dec`.
    pub width: usize,
}

pub struct DecodeOutput {
    /// `P0..P3`, shallow to deep.
    pub predictions: Vec<LateralPrediction>,
    /// Same-layer pass features `f_p`, in AIM execution order.
    pub pass_features: Vec<Var>,
    pub aim_calls: usize,
}

#[derive(Clone, Debug)]
pub struct Fsd {
    pub schedule: DecodeSchedule,
    /// Per-input 1×1 convolutions mapping `in_channels` to `width`.
    pub adapters: Vec<Conv2d>,
    pub aims: Vec<Aim>,
    pub heads: Vec<LateralHead>,
}

impl Fsd {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &FsdConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if config.in_channels == 0 || config.width == 0 {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        let schedule = build_schedule(NUM_INPUTS)?;
        let adapters = (1..=NUM_INPUTS)
            .map(|k| {
                Conv2d::new(
                    store,
                    &format!("{name}.adapter{k}"),
                    config.in_channels,
                    config.width,
                    1,
                    true,
                    false,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let aims = schedule
            .aims
            .iter()
            .map(|a| {
                Aim::new(
                    store,
                    &format!("{name}.aim{}", a.id),
                    config.width,
                    a.prev.is_some(),
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let heads = (0..schedule.num_layers())
            .map(|i| LateralHead::new(store, &format!("{name}.head{i}"), config.width, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            schedule,
            adapters,
            aims,
            heads,
        })
    }

    /// Adapts `features` (`F0_1..F0_12`, in that order) to the decoder width
    /// and runs the schedule.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        features: &[Var],
        target_h: usize,
        target_w: usize,
    ) -> Result<DecodeOutput> {
        if features.len() != NUM_INPUTS {
            return Err(Error::arg(
                "decode",
                format!("expected {NUM_INPUTS} features, got {}", features.len()),
            ));
        }
        let adapted = features
            .iter()
            .zip(&self.adapters)
            .map(|(&f, a)| a.forward(g, ps, f))
            .collect::<Result<Vec<_>>>()?;
        self.decode_adapted(g, ps, &adapted, target_h, target_w)
    }

    /// Runs the schedule on features already at the decoder width.
    pub fn decode_adapted<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        features: &[Var],
        target_h: usize,
        target_w: usize,
    ) -> Result<DecodeOutput> {
        if features.len() != NUM_INPUTS {
            return Err(Error::arg(
                "decode",
                format!("expected {NUM_INPUTS} features, got {}", features.len()),
            ));
        }
        let mut env: HashMap<Feature, Var> = features
            .iter()
            .enumerate()
            .map(|(k, &v)| (Feature::Level { layer: 0, index: k + 1 }, v))
            .collect();
        let fetch = |env: &HashMap<Feature, Var>, f: Feature| {
            env.get(&f)
                .copied()
                .ok_or_else(|| Error::arg("decode", format!("{f} is not available")))
        };
        let mut pass_features = Vec::with_capacity(self.aims.len());
        let mut predictions = Vec::with_capacity(self.heads.len());
        let mut aim_calls = 0;
        for (spec, aim) in self.schedule.aims.iter().zip(&self.aims) {
            let prev = spec.prev.map(|f| fetch(&env, f)).transpose()?;
            let f_i = fetch(&env, spec.f_i)?;
            let f_im1 = fetch(&env, spec.f_im1)?;
            let (f_p, f_out) = aim.forward(g, ps, prev, f_i, f_im1)?;
            aim_calls += 1;
            env.insert(spec.pass_out, f_p);
            env.insert(spec.next_out, f_out);
            pass_features.push(f_p);
            if self.schedule.lateral_source(spec.layer).map(|s| s.id) == Some(spec.id) {
                predictions.push(self.heads[spec.layer].forward(g, ps, f_out, target_h, target_w)?);
            }
        }
        Ok(DecodeOutput {
            predictions,
            pass_features,
            aim_calls,
        })
    }
}
