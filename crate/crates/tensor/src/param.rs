use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::{numel_of, Tensor};

/// A named trainable value.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    value: Tensor,
    frozen: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            value: Tensor::leaf(shape, data)?,
            frozen: false,
        })
    }

    /// Current value. Frozen parameters are handed out untracked.
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        if frozen != self.frozen {
            self.frozen = frozen;
            self.value = if frozen {
                self.value.detach()
            } else {
                self.value.detach_leaf()
            };
        }
    }

    /// Replaces the value. Shape must not change.
    pub fn assign(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.value.numel() {
            return Err(TensorError::shape("assign", self.value.shape(), &[data.len()]));
        }
        let shape = self.value.shape().to_vec();
        self.value = if self.frozen {
            Tensor::from_vec(&shape, data)?
        } else {
            Tensor::leaf(&shape, data)?
        };
        Ok(())
    }
}

/// All parameters and non-trainable buffers of a model, keyed by name.
///
/// Iteration order is the lexicographic name order, which fixes the layout
/// of checkpoints and the order in which optimizers visit parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
    buffers: BTreeMap<String, Tensor>,
}

/// Weight initialiser: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..numel_of(shape)).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(TensorError::invalid("param", format!("duplicate parameter `{name}`")));
        }
        self.params
            .insert(name.to_string(), Parameter::new(name, shape, data)?);
        Ok(())
    }

    /// Registers a weight drawn with [`uniform_fan_in`].
    pub fn init_weight<R: Rng>(&mut self, rng: &mut R, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let data = uniform_fan_in(rng, shape, fan_in);
        self.insert(name, shape, data)
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, shape, vec![value; numel_of(shape)])
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.params
            .get(name)
            .map(|p| p.value().clone())
            .ok_or_else(|| TensorError::invalid("param", format!("unknown parameter `{name}`")))
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    /// Names that start with `prefix`, in store order.
    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.params
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for (k, p) in self.params.iter_mut() {
            if k.starts_with(prefix) {
                p.set_frozen(frozen);
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value().numel()).sum()
    }

    pub fn insert_buffer(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.buffers.insert(name.to_string(), Tensor::from_vec(shape, data)?);
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| TensorError::invalid("buffer", format!("unknown buffer `{name}`")))
    }

    pub fn set_buffer(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let shape = self.buffer(name)?.shape().to_vec();
        self.insert_buffer(name, &shape, data)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Every parameter and buffer as (name, tensor), parameters first.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), p.value().clone()))
            .collect();
        out.extend(self.buffers.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    /// Overwrites values from `(name, tensor)` pairs. Every parameter and
    /// buffer of `self` must be present with a matching shape.
    pub fn load_named(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            let t = tensors
                .get(name)
                .ok_or_else(|| TensorError::Format(format!("missing parameter `{name}`")))?;
            if t.shape() != p.value().shape() {
                return Err(TensorError::shape("load", p.value().shape(), t.shape()));
            }
            p.assign(t.to_vec())?;
        }
        for (name, b) in self.buffers.iter_mut() {
            let t = tensors
                .get(name)
                .ok_or_else(|| TensorError::Format(format!("missing buffer `{name}`")))?;
            if t.shape() != b.shape() {
                return Err(TensorError::shape("load", b.shape(), t.shape()));
            }
            *b = t.detach();
        }
        Ok(())
    }
}
