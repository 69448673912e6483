//! Parameterized layers built from graph ops.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::RunningStats;
use crate::param::{BufferId, InitSpec, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Std of the truncated-normal init used for projections and embeddings.
pub const PROJECTION_INIT_STD: f64 = 0.02;

/// Affine map over the last axis, `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            &[inputs, outputs],
            InitSpec::TruncatedNormal {
                std: PROJECTION_INIT_STD,
            },
            rng,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), &[outputs], InitSpec::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(ps, b);
                g.add_trailing(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Learnable scale and shift over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), &[width], InitSpec::Ones, rng)?,
            beta: store.add(format!("{name}.beta"), &[width], InitSpec::Zeros, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
}

impl Conv2d {
    /// Kaiming fan-in init; `zero_init` starts the layer at exactly zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        bias: bool,
        zero_init: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let init = if zero_init {
            InitSpec::Zeros
        } else {
            InitSpec::KaimingNormal {
                fan_in: inputs * kernel * kernel,
            }
        };
        let weight = store.add(format!("{name}.weight"), &[outputs, inputs, kernel, kernel], init, rng)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), &[outputs], InitSpec::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { weight, bias, kernel })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        g.conv2d(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), &[channels], InitSpec::Ones, rng)?,
            beta: store.add(format!("{name}.beta"), &[channels], InitSpec::Zeros, rng)?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones([channels]))?,
        })
    }

    /// Batch statistics in training mode (staging the running-stat update on
    /// the graph), running statistics in evaluation mode.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        let running = RunningStats {
            mean: ps.buffer(self.running_mean).clone(),
            var: ps.buffer(self.running_var).clone(),
        };
        let (y, updated) = g.batch_norm2d(x, gamma, beta, &running)?;
        if let Some(stats) = updated {
            g.stage_buffer(self.running_mean, stats.mean);
            g.stage_buffer(self.running_var, stats.var);
        }
        Ok(y)
    }
}

/// 3×3 convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct Cbr {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Cbr {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), inputs, outputs, 3, false, false, rng)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), outputs, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, ps, x)?;
        let y = self.bn.forward(g, ps, y)?;
        Ok(g.relu(y))
    }
}
