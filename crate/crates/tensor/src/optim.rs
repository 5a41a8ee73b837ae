use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Linear warmup to `peak_lr` at step `warmup`, then decay with `1/sqrt(step)`.
/// Steps are 1-based.
pub fn inv_sqrt_lr(step: u64, peak_lr: f64, warmup: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    if step <= warmup {
        peak_lr * step / warmup
    } else {
        peak_lr * (warmup / step).sqrt()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("gradient for {name} has shape {grad:?}, parameter has {param:?}")]
pub struct ShapeMismatch {
    pub name: String,
    pub grad: [usize; 2],
    pub param: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.get(id).rows, params.get(id).cols)).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    /// One update at learning rate `lr`. Parameters without a gradient still
    /// decay and still see their moments age.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<(), ShapeMismatch> {
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                let p = params.get(id);
                if g.shape() != p.shape() {
                    return Err(ShapeMismatch { name: params.name(id).to_string(), grad: g.shape(), param: p.shape() });
                }
            }
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let id = ParamId(i);
            let g = grads.get(id);
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.data.len() {
                let gk = g.map_or(0.0, |g| g.data[k]);
                m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * gk;
                v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                let old = p.data[k];
                p.data[k] = old - lr * (mhat / (vhat.sqrt() + eps)) - lr * weight_decay * old;
            }
        }
        Ok(())
    }
}
