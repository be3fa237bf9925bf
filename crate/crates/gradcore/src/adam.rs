use serde::{Deserialize, Serialize};

use crate::error::{shape_err, GradError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Floor added to the second-moment root.
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Tensor,
    v: Tensor,
}

impl AdamState {
    pub fn new(config: AdamConfig, shape: &[usize]) -> Result<Self> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(GradError::Optimizer(format!("learning rate must be > 0, got {}", config.lr)));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(GradError::Optimizer(format!(
                "betas must lie in [0, 1), got ({}, {})",
                config.beta1, config.beta2
            )));
        }
        if config.eps < 0.0 {
            return Err(GradError::Optimizer("eps must be >= 0".into()));
        }
        Ok(Self {
            config,
            step: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Returns the updated parameters and advances the moment estimates.
    pub fn step(&mut self, params: &Tensor, grad: &Tensor) -> Result<Tensor> {
        if params.shape() != self.m.shape() || grad.shape() != self.m.shape() {
            return Err(shape_err(
                "adam_step",
                format!(
                    "state {:?}, params {:?}, grad {:?}",
                    self.m.shape(),
                    params.shape(),
                    grad.shape()
                ),
            ));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut out = params.clone();
        let m = self.m.data_mut();
        let v = self.v.data_mut();
        for (k, p) in out.data_mut().iter_mut().enumerate() {
            let g = grad.data()[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            let m_hat = m[k] / c1;
            let denom = (v[k] / c2).sqrt() + eps;
            if denom > 0.0 {
                *p -= lr * m_hat / denom;
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &Tensor, grad: &Tensor) -> Result<Tensor> {
    state.step(params, grad)
}
