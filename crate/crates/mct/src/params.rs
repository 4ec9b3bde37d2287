//! Named parameter trees with gradient and Adam moment buffers.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        ParamTensor {
            name: name.into(),
            grad: Tensor::zeros(shape.clone()),
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
            value,
        }
    }
}

/// Non-trainable state saved alongside parameters (batchnorm running statistics).
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, name-unique collection of trainable parameters and buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<ParamTensor<T>>,
    by_name: IndexMap<String, usize>,
    buffers: Vec<Buffer<T>>,
    buffer_by_name: IndexMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: IndexMap::new(),
            buffers: Vec::new(),
            buffer_by_name: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.buffer_by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(ParamTensor::new(name, value));
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.buffer_by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name {name}")));
        }
        let id = self.buffers.len();
        self.buffer_by_name.insert(name.clone(), id);
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &ParamTensor<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[ParamTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.params
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.id(name).map(|id| self.param(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.id(name).map(move |id| self.param_mut(id))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].value
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        self.buffer_by_name.get(name).copied().map(BufferId)
    }

    pub fn buffer_by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffer_id(name).map(|id| self.buffer(id))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Number of scalar trainable values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Copies all values into a store of another precision, resetting grads and moments.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast()).expect("unique names");
        }
        for b in &self.buffers {
            out.add_buffer(b.name.clone(), b.value.cast()).expect("unique names");
        }
        out
    }
}

/// Weight initialisers.
pub mod init {
    use super::*;

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Tensor<T> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-bound..bound)))
    }

    /// Uniform in `±sqrt(6 / fan_in)`, suited to ReLU layers.
    pub fn kaiming_uniform<T: Real, R: Rng + ?Sized>(
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-bound..bound)))
    }

    pub fn normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape.to_vec(), |_| T::of(dist.sample(rng)))
    }
}
