use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
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

/// One bias-corrected Adam update over every entry of `params`.
pub fn adam_step(params: &mut ParameterStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("adam: learning rate must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
        return Err(Error::Config(format!(
            "adam: invalid beta1 {beta1}, beta2 {beta2} or eps {eps}"
        )));
    }
    let t = params.bump_step() as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (_, e) in params.iter_mut() {
        let g = e.grad.data();
        let m = e.adam_m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = e.adam_v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (e.adam_m.data(), e.adam_v.data());
        for ((p, mi), vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
            *p -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

impl AdamConfig {
    pub fn step(&self, params: &mut ParameterStore) -> Result<()> {
        adam_step(params, self.lr, self.beta1, self.beta2, self.eps)
    }
}
