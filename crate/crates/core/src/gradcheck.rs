use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor on the relative-error denominator.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares the reverse-mode gradient of a scalar function with central
/// finite differences `(f(x+h) - f(x-h)) / 2h` and returns the largest
/// relative error `|a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
pub fn check_gradient<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    check_gradients(|g, xs| f(g, xs[0]), std::slice::from_ref(x), step)
}

/// [`check_gradient`] over several inputs at once.
pub fn check_gradients<T, F>(f: F, xs: &[Tensor<T>], step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new(Mode::Train);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_value(&g, out)
    };

    let mut g = Graph::new(Mode::Train);
    let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_value(&g, out)?;
    let grads = g.backward(out)?;

    let two = T::lit(2.0);
    let floor = T::lit(GRAD_CHECK_FLOOR);
    let mut worst = T::zero();
    let mut probe = xs.to_vec();
    for (which, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(xs[which].shape()));
        for i in 0..xs[which].numel() {
            let orig = xs[which].data()[i];
            probe[which].data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (two * step);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Gradient check with respect to every parameter `f` reads from `store`.
///
/// Perturbed evaluations run on a copy of the store; running-statistic
/// buffers are never committed, so each evaluation sees the same state.
pub fn check_param_gradients<T, F>(f: F, store: &ParamStore<T>, step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut g = Graph::new(Mode::Train);
    let out = f(&mut g, store)?;
    scalar_value(&g, out)?;
    let grads = g.backward(out)?;

    let two = T::lit(2.0);
    let floor = T::lit(GRAD_CHECK_FLOOR);
    let mut worst = T::zero();
    let mut probe = store.clone();
    let eval = |ps: &ParamStore<T>| -> Result<T> {
        let mut g = Graph::new(Mode::Train);
        let out = f(&mut g, ps)?;
        scalar_value(&g, out)
    };
    for (id, v) in g.param_vars() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.tensor(id).shape()));
        for i in 0..analytic.numel() {
            let orig = store.tensor(id).data()[i];
            probe.tensor_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (two * step);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn scalar_value<T: Scalar>(g: &Graph<T>, out: Var) -> Result<T> {
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::NotScalar {
            op: "check_gradient",
            shape: v.shape().to_vec(),
        });
    }
    Ok(v.data()[0])
}
