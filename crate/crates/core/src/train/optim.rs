use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{ParamAccess, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.95, weight_decay: 1e-4, eps: 1e-8 }
    }
}

/// One AdamW update of `theta` in place. `step` is the 1-based update count
/// used for bias correction. Weight decay is applied to the weights directly
/// before the moment update.
pub fn adamw_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    step: u64,
    cfg: &AdamWConfig,
) {
    let decay = T::of(1.0 - lr * cfg.weight_decay);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powf(step as f64)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powf(step as f64)));
    let (lr, eps, one) = (T::of(lr), T::of(cfg.eps), T::one());
    for i in 0..theta.len() {
        let g = grad[i];
        theta[i] *= decay;
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// AdamW state keyed by parameter name. Moments are created on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, moments: BTreeMap::new() }
    }

    /// Applies one update to every parameter accepted by `trainable`, using
    /// the gradients currently accumulated in the model.
    pub fn step(&mut self, model: &mut impl ParamAccess<T>, lr: f64, trainable: &dyn Fn(&str) -> bool) {
        self.step += 1;
        let step = self.step;
        let cfg = self.config;
        let moments = &mut self.moments;
        model.visit_params(&mut |name, p: &mut Tensor2<T>| {
            if !trainable(name) || p.is_empty() {
                return;
            }
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            let (theta, grad) = p.data_and_grad_mut();
            adamw_update(theta, grad, m, v, lr, step, &cfg);
        });
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_min;
    }
    let s = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * s).cos())
}
