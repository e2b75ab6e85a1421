use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Grads, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with decoupled weight decay and bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    first: [Vec<f64>; 4],
    second: [Vec<f64>; 4],
}

impl AdamW {
    pub fn new(params: &ModelParams, config: AdamWConfig) -> AdamW {
        let shape = || params.blocks().map(|b| vec![0.0; b.params.len()]);
        AdamW { config, step: 0, first: shape(), second: shape() }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        for (b, block) in params.blocks_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.first[b], &mut self.second[b], &grads.0[b]);
            for i in 0..block.params.len() {
                let p = &mut block.params[i];
                *p -= c.lr * c.weight_decay * *p;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= c.lr * m_hat / (libm::sqrt(v_hat) + c.eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
