//! Stochastic gradient descent with heavy-ball momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 0.05, momentum: 0.9, weight_decay: 1e-4 }
    }
}

/// Optimizer state: one velocity buffer per parameter, zero at start.
#[derive(Clone, Debug)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &[Tensor]) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", config.learning_rate)));
        }
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", config.momentum)));
        }
        if !(config.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay must be >= 0, got {}", config.weight_decay)));
        }
        Ok(Sgd { config, velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect() })
    }

    pub fn learning_rate(&self) -> f32 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f32) {
        self.config.learning_rate = lr;
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    /// `v ← m·v + (g + wd·p)`, `p ← p − lr·v`, then clears every gradient.
    ///
    /// Nothing is updated unless every parameter carries a gradient.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.has_grad()) {
            return Err(Error::MissingGrad(i));
        }
        let SgdConfig { learning_rate: lr, momentum, weight_decay: wd } = self.config;
        for (p, v) in params.iter().zip(self.velocity.iter_mut()) {
            {
                let grad = p.grad_ref();
                let grad = grad.as_ref().expect("checked above");
                let mut data = p.data_mut();
                for ((w, g), vel) in data.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *vel = momentum * *vel + (g + wd * *w);
                    *w -= lr * *vel;
                }
            }
            p.zero_grad();
        }
        Ok(())
    }
}
