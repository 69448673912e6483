#![allow(dead_code)]

pub mod suite;

use fspnet_core::{Graph, Mode, ParamStore, Result, SeededRng, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const TRIALS: usize = 20;
/// Smallest gradient magnitude a trial may contain. Forward rounding puts
/// central differences at step 1e-5 on a noise floor near 1e-10, so smaller
/// coordinates cannot be resolved to a relative error of 1e-4.
pub const RESOLUTION: f64 = 1e-5;
/// Minimum distance of any ReLU input from its kink for a trial to count.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| scale * rng.normal())
}

pub fn uniform_tensor(shape: &[usize], rng: &mut SeededRng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_in(lo, hi))
}

/// Overwrites every parameter with `N(0, scale²)` draws so that no branch
/// starts at an exact zero.
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut SeededRng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.tensor_mut(id).data_mut() {
            *v = scale * rng.normal();
        }
    }
}

/// Fan-in scaled draws: weights get `gain / sqrt(fan_in)`, norm scales sit
/// near 1 and every bias-like vector near 0. Keeps activations in the
/// responsive range so no gradient coordinate sinks below the resolution
/// of a finite difference.
pub fn randomize_fan_in(store: &mut ParamStore<f64>, rng: &mut SeededRng, gain: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        let shape = p.tensor.shape().to_vec();
        let is_gamma = p.name.ends_with("gamma");
        let (center, std) = match shape.len() {
            1 if is_gamma => (1.0, 0.2),
            1 => (0.0, 0.2),
            2 => (0.0, gain / (shape[0] as f64).sqrt()),
            _ => (0.0, gain / (shape[1..].iter().product::<usize>() as f64).sqrt()),
        };
        for v in store.tensor_mut(id).data_mut() {
            *v = center + std * rng.normal();
        }
    }
}

/// `Σ x ⊙ r` with fixed random `r`, a scalar whose gradient reaches every
/// element of `x` with a different weight.
pub fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = SeededRng::new(seed);
    let shape = g.shape(x).to_vec();
    let r = g.constant(random_tensor(&shape, &mut rng, 1.0));
    let p = g.mul(x, r)?;
    Ok(g.sum(p))
}

/// Whether evaluating `f` once keeps every ReLU input at least
/// [`KINK_MARGIN`] away from zero.
pub fn clear_of_kinks(f: impl Fn(&mut Graph<f64>) -> Result<Var>) -> bool {
    let mut g = Graph::new(Mode::Train);
    f(&mut g).unwrap();
    g.relu_margin().is_none_or(|m| m > KINK_MARGIN)
}

/// Smallest nonzero `|∂f/∂θ|` over every parameter coordinate `f` reads and
/// every input coordinate. Exact zeros (dead ReLU channels) are reproduced
/// exactly by finite differences and need no resolution.
pub fn min_gradient(
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
    store: &ParamStore<f64>,
    xs: &[Tensor<f64>],
) -> f64 {
    let mut g = Graph::new(Mode::Train);
    let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, store, &vars).unwrap();
    let grads = g.backward(out).unwrap();
    let mut all: Vec<Var> = vars;
    all.extend(g.param_vars().into_iter().map(|(_, v)| v));
    all.iter()
        .flat_map(|&v| grads.get(v).map(|t| t.data().to_vec()).unwrap_or_default())
        .filter(|v| *v != 0.0)
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}
