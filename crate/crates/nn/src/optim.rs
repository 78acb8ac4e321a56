use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            let mut z = ParamStore::new();
            for (k, t) in p.iter() {
                z.insert(k.clone(), Tensor::zeros(t.shape()));
            }
            z
        };
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Applies one update with learning rate `lr` to every parameter in `grads`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, g) in grads.iter() {
            let missing = || Error::ParamMismatch(format!("optimizer has no state for {name}"));
            let p = params.get_mut(name).ok_or_else(missing)?;
            let m = self.m.get_mut(name).ok_or_else(missing)?;
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::ParamMismatch(format!("gradient shape for {name}")));
            }
            let v = self.v.get_mut(name).ok_or_else(missing)?;
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * c.weight_decay * *pi;
                *pi -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
