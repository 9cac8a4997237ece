use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing that restarts every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSchedule {
    pub max_lr: f64,
    pub min_lr: f64,
    pub period: usize,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        CosineSchedule {
            max_lr: 1e-3,
            min_lr: 1e-7,
            period: 50,
        }
    }
}

impl CosineSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.max_lr >= self.min_lr && self.max_lr.is_finite()) {
            return Err(Error::invalid("learning-rate bounds must be positive and ordered"));
        }
        if self.period < 1 {
            return Err(Error::invalid("schedule period must be at least 1"));
        }
        Ok(())
    }

    /// `max_lr` at multiples of the period, `min_lr` half a period later.
    pub fn lr(&self, epoch: usize) -> f64 {
        let phase = (epoch % self.period) as f64 / self.period as f64;
        let c = (2.0 * std::f64::consts::PI * phase).cos();
        self.min_lr + (self.max_lr - self.min_lr) * 0.5 * (1.0 + c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(Error::invalid("Adam needs betas in [0, 1) and a positive eps"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::invalid("Adam state, parameters and gradient differ in length"));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.steps += 1;
        let c1 = 1.0 - beta1.powf(self.steps as f64);
        let c2 = 1.0 - beta2.powf(self.steps as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}
