//! Adaptive-moment optimizer with decoupled weight decay.

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Decoupled-weight-decay Adam. Defaults follow the training recipe used
/// throughout this crate: lr 1e-4, decay 0.05, betas (0.9, 0.999).
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> AdamW {
        let m = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        let v = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently accumulated in the store.
    /// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = store.grad(id).clone();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((g, mi), vi) in grad.data().iter().zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            }
            let value = store.value_mut(id);
            for ((p, mi), vi) in value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}
