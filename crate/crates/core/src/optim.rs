//! Adam with per-group learning-rate multipliers, and the cosine schedule.

use std::collections::HashMap;

use crate::error::{config_err, Result, VldError};
use crate::params::{ParamGroup, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub prompt_lr_mult: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 2.5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            prompt_lr_mult: 25.0,
        }
    }
}

/// Moment buffers keyed by parameter name.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: HashMap<String, Vec<f64>>,
    second: HashMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn group_multiplier(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Base => 1.0,
            ParamGroup::Prompt => self.config.prompt_lr_mult,
        }
    }

    /// One Adam update at learning rate `lr` (before the group multiplier).
    ///
    /// Every parameter must carry a gradient buffer; a parameter that did not
    /// take part in the loss should be given an explicit zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(VldError::Contract(format!("parameter '{}' has no gradient", p.name)));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for p in store.iter_mut() {
            let mult = match p.group {
                ParamGroup::Base => 1.0,
                ParamGroup::Prompt => c.prompt_lr_mult,
            };
            let step_lr = lr * mult;
            let n = p.tensor.len();
            let m = self.first.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let g = p.tensor.grad().expect("checked above").to_vec();
            for (i, x) in p.tensor.data_mut().iter_mut().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *x -= step_lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// `base_lr * (1 + cos(pi * step / total_steps)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(config_err("cosine schedule needs total_steps > 0"));
    }
    let s = step.min(total_steps) as f64;
    Ok(base_lr * (1.0 + (std::f64::consts::PI * s / total_steps as f64).cos()) / 2.0)
}
