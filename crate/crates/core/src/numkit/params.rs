use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors. Iteration order is the sorted name order, which
/// keeps serialization and updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    seed: u64,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Adds a conv kernel `k × c_in × c_out` and bias `c_out`, drawn uniformly
    /// from `±sqrt(1 / fan_in)` with `fan_in = k · c_in`.
    pub fn init_conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
    ) -> Result<()> {
        let bound = (1.0 / (k * c_in) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w = Tensor::new(vec![k, c_in, c_out], draw(k * c_in * c_out))?;
        let b = Tensor::new(vec![c_out], draw(c_out))?;
        self.insert(format!("{prefix}.weight"), w)?;
        self.insert(format!("{prefix}.bias"), b)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// A zero-filled set with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
            seed: self.seed,
        }
    }

    /// Overwrites the values of `name`, keeping its shape fixed.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        slot.same_shape(&value, "ParamSet::assign")?;
        *slot = value;
        Ok(())
    }

    pub(crate) fn accumulate(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        slot.same_shape(grad, "ParamSet::accumulate")?;
        slot.add_assign(grad);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}
