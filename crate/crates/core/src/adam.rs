//! Bias-corrected Adam over a [`ParamStore`], applied in insertion order so
//! trajectories are reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SailError};
use crate::store::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub hyper: AdamHyper,
    /// Step counter; incremented before each update.
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, hyper: AdamHyper) -> Self {
        let m = (0..store.len()).map(|s| Tensor::zeros(store.param(s).dims().to_vec())).collect();
        let v = (0..store.len()).map(|s| Tensor::zeros(store.param(s).dims().to_vec())).collect();
        AdamState { hyper, t: 0, m, v }
    }

    /// One update from the gradients accumulated in `store`; clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(SailError::invalid("adam_step", "state does not match store"));
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for slot in 0..store.len() {
            let n = store.param(slot).len();
            for i in 0..n {
                let g = store.grad(slot).data()[i];
                let m = &mut self.m[slot].data_mut()[i];
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                let v = &mut self.v[slot].data_mut()[i];
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                let m_hat = self.m[slot].data()[i] / bc1;
                let v_hat = self.v[slot].data()[i] / bc2;
                store.param_mut(slot).data_mut()[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
            if !store.param(slot).is_finite() {
                return Err(SailError::non_finite(format!("adam_step on {}", store.name(slot))));
            }
        }
        store.zero_grads();
        Ok(())
    }
}
