use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// How a parameter was initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    /// Normal(0, std) truncated at two standard deviations.
    TruncatedNormal {
        std: f64,
    },
    /// Normal(0, sqrt(2 / fan_in)).
    KaimingNormal {
        fan_in: usize,
    },
    Zeros,
    Ones,
    Identity,
}

impl InitSpec {
    pub fn sample<T: Scalar>(&self, shape: &[usize], rng: &mut SeededRng) -> Tensor<T> {
        match *self {
            InitSpec::TruncatedNormal { std } => Tensor::from_fn(shape, |_| T::lit(rng.truncated_normal(std))),
            InitSpec::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| T::lit(rng.normal() * std))
            }
            InitSpec::Zeros => Tensor::zeros(shape),
            InitSpec::Ones => Tensor::ones(shape),
            InitSpec::Identity => {
                let cols = *shape.last().unwrap();
                Tensor::from_fn(shape, |i| if i / cols == i % cols { T::one() } else { T::zero() })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub init: InitSpec,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Owns every trainable tensor of a model, keyed by unique name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
            buffer_names: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: InitSpec,
        rng: &mut SeededRng,
    ) -> Result<ParamId> {
        let tensor = init.sample(shape, rng);
        self.insert(name.into(), tensor, init)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>, init: InitSpec) -> Result<ParamId> {
        if self.names.contains_key(&name) {
            return Err(Error::arg("param", format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.names.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor, init });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_names.contains_key(&name) {
            return Err(Error::arg("param", format!("duplicate buffer name {name:?}")));
        }
        let id = self.buffers.len();
        self.buffer_names.insert(name.clone(), id);
        self.buffers.push(Buffer { name, tensor });
        Ok(BufferId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].tensor
    }

    pub fn set_buffer(&mut self, id: BufferId, tensor: Tensor<T>) {
        debug_assert_eq!(tensor.shape(), self.buffers[id.0].tensor.shape());
        self.buffers[id.0].tensor = tensor;
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces a parameter's values, checking the shape is unchanged.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::arg("param", format!("unknown parameter {name:?}")))?;
        let slot = &mut self.params[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("param", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }

    /// Replaces a buffer's values, checking the shape is unchanged.
    pub fn set_buffer_by_name(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = *self
            .buffer_names
            .get(name)
            .ok_or_else(|| Error::arg("param", format!("unknown buffer {name:?}")))?;
        let slot = &mut self.buffers[id].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("param", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut rng = SeededRng::new(0);
        let mut ps = ParamStore::<f64>::new();
        ps.add("w", &[2, 2], InitSpec::Zeros, &mut rng).unwrap();
        assert!(ps.add("w", &[2, 2], InitSpec::Zeros, &mut rng).is_err());
    }

    #[test]
    fn init_is_reproducible() {
        let spec = InitSpec::TruncatedNormal { std: 0.02 };
        let a: Tensor<f64> = spec.sample(&[4, 4], &mut SeededRng::new(5));
        let b: Tensor<f64> = spec.sample(&[4, 4], &mut SeededRng::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn identity_init() {
        let t: Tensor<f64> = InitSpec::Identity.sample(&[3, 3], &mut SeededRng::new(0));
        assert_eq!(t, Tensor::eye(3));
    }
}
