//! Adam and the step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `lr(epoch) = base / factor^(epoch / every)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub every: usize,
    pub factor: f64,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.every).unwrap_or(0);
        self.base / self.factor.powi(drops as i32)
    }
}

/// First and second moments for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub step: u64,
    /// Indexed by parameter, in store order.
    pub moments: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: store
                .params()
                .iter()
                .map(|p| Moments {
                    m: Tensor::zeros(p.tensor.shape()),
                    v: Tensor::zeros(p.tensor.shape()),
                })
                .collect(),
        }
    }

    /// One bias-corrected update of every parameter `graph` used. Parameters
    /// without a gradient still count toward the step.
    pub fn step(&mut self, store: &mut ParamStore<T>, graph: &Graph<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let used: Vec<(ParamId, Var)> = graph.param_vars();
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (id, var) in used {
            let Some(grad) = grads.get(var) else { continue };
            let mom = self
                .moments
                .get_mut(id.index())
                .ok_or_else(|| Error::arg("adam", "parameter registered after the optimizer"))?;
            let param = store.tensor_mut(id);
            if grad.shape() != param.shape() {
                return Err(Error::shape("adam", param.shape(), grad.shape()));
            }
            let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
            for (((p, &gr), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (T::one() - b1) * gr;
                *v = b2 * *v + (T::one() - b2) * gr * gr;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
