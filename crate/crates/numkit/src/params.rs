use std::collections::HashMap;

use crate::error::{NumError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors with gradient accumulators.
///
/// Parameters inserted with [`ParamStore::insert_frozen`] never receive
/// gradients and cannot be mutated afterwards.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    frozen: Vec<bool>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, value: Tensor, frozen: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumError::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value);
        self.names.push(name.to_string());
        self.frozen.push(frozen);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.push(name, value, false)
    }

    pub fn insert_frozen(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.push(name, value, true)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.values[id.0])
    }

    pub fn value_mut(&mut self, id: ParamId) -> Result<&mut Tensor> {
        if self.frozen[id.0] {
            return Err(NumError::Contract(format!(
                "parameter {} is frozen",
                self.names[id.0]
            )));
        }
        Ok(&mut self.values[id.0])
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.values
            .iter()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .map(|(v, _)| v.len())
            .sum()
    }

    /// Global L2 norm of the trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .flat_map(|(g, _)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if max_norm > 0.0 && norm > max_norm {
            let s = max_norm / norm;
            for (g, f) in self.grads.iter_mut().zip(&self.frozen) {
                if !*f {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Tensor], &[Vec<f64>], &[bool]) {
        (&mut self.values, &self.grads, &self.frozen)
    }

    /// Iterate `(name, value, frozen)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.frozen)
            .map(|((n, v), f)| (n.as_str(), v, *f))
    }

    /// Round every parameter through `f32`, matching what a checkpoint stores.
    pub fn round_f32(&mut self) {
        for v in &mut self.values {
            v.round_f32();
        }
    }
}
