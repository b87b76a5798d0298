//! Named parameter storage with insertion-ordered iteration and a gradient
//! accumulator per parameter. Every training-time structure (optimizer,
//! checkpointing, gradient checking) addresses parameters through this map.

use std::collections::HashMap;

use crate::error::{Result, SailError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a parameter. Names must be unique; insertion order is the
    /// iteration order everywhere (optimizer, checkpoints, grad checks).
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(SailError::invalid("ParamStore::register", format!("duplicate name {name}")));
        }
        let slot = self.names.len();
        self.grads.push(Tensor::zeros(tensor.dims().to_vec()));
        self.params.push(tensor);
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn param(&self, slot: usize) -> &Tensor {
        &self.params[slot]
    }

    pub fn param_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.params[slot]
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| &self.params[s])
    }

    pub fn grad(&self, slot: usize) -> &Tensor {
        &self.grads[slot]
    }

    pub fn grad_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.grads[slot]
    }

    /// Add `scale * g` into the gradient accumulator for `slot`.
    pub fn accumulate_grad(&mut self, slot: usize, g: &Tensor, scale: f64) -> Result<()> {
        let acc = &mut self.grads[slot];
        if !acc.same_dims(g) {
            return Err(SailError::shape(
                "accumulate_grad",
                format!("{:?} vs {:?} for {}", acc.dims(), g.dims(), self.names[slot]),
            ));
        }
        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.params.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}
