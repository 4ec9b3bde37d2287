//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of steps taken so far.
    pub t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
        }
    }
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            ..Default::default()
        }
    }

    /// One update of every parameter in `store` at learning rate `lr`, using the
    /// gradients currently accumulated there.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        let (lr, eps, wd) = (T::of(lr), T::of(self.eps), T::of(self.weight_decay));
        for p in store.params_mut() {
            let g = p.grad.data();
            let m = p.adam_m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + one_b1 * gi;
            }
            let v = p.adam_v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + one_b2 * gi * gi;
            }
            let (m, v) = (p.adam_m.data(), p.adam_v.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *w = *w - lr * (mhat / (vhat.sqrt() + eps) + wd * *w);
            }
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step.min(total) as f64) / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}
