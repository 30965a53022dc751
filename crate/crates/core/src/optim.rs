//! Adam over the network's trainable parameters, with state that can be
//! saved and restored exactly.

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::model::{ModelError, Network};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per trainable parameter in
/// [`Network::trainable`] order.
#[derive(Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(net: &Network, config: AdamConfig) -> Result<Self, ModelError> {
        let zeros = || -> Result<Vec<Tensor>, ModelError> {
            net.trainable().map(|p| Ok(p.var.as_tensor().zeros_like()?)).collect()
        };
        Ok(Self {
            config,
            step: 0,
            m: zeros()?,
            v: zeros()?,
        })
    }

    /// One update. Parameters without a gradient are left untouched, moments
    /// included.
    pub fn apply(&mut self, net: &Network, grads: &GradStore) -> Result<(), ModelError> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in net.trainable().enumerate() {
            let Some(g) = grads.get(p.var.as_tensor()) else {
                continue;
            };
            // moments must not carry autograd history from step to step
            let g = g.detach();
            let m = ((&self.m[i] * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            let v = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let denom = ((&v / bc2)?.sqrt()? + eps)?;
            let update = ((&m / bc1)? / denom)?;
            p.var.set(&(p.var.as_tensor() - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}
