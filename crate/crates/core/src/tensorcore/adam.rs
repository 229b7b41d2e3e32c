use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment accumulators for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// Parameter names, in the order the moments are stored.
    pub names: Vec<String>,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Param<T>]) -> Self {
        Self {
            config,
            step: 0,
            names: params.iter().map(|p| p.name.clone()).collect(),
            first: params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
        }
    }

    /// One bias-corrected Adam update over every parameter, after which the
    /// gradients are zeroed.
    pub fn step(&mut self, params: &mut [Param<T>]) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.names.len(),
                params.len()
            )));
        }
        for (p, name) in params.iter().zip(&self.names) {
            if &p.name != name {
                return Err(Error::Contract(format!("optimizer expected `{name}`, got `{}`", p.name)));
            }
            if p.tensor.grad().is_none() {
                return Err(Error::Contract(format!("parameter `{}` has no gradient", p.name)));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powf(self.step as f64));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            if let Some(g) = p.tensor.grad_mut() {
                g.fill(T::zero());
            }
        }
        Ok(())
    }
}
