use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid AdamW settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment buffers, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let names = store.names().map(str::to_string).collect();
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        OptimizerState {
            cfg,
            step: 0,
            names,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One AdamW update with bias correction. Weight decay scales the weights
/// directly by `1 - lr * weight_decay`, outside the adaptive step.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if store.len() != state.names.len() {
        return Err(Error::Config(format!(
            "optimizer tracks {} parameters, store has {}",
            state.names.len(),
            store.len()
        )));
    }
    for (i, (name, t)) in store.iter().enumerate() {
        if name != state.names[i] || t.numel() != state.m[i].len() {
            return Err(Error::Config(format!("optimizer state does not match parameter `{name}`")));
        }
        if t.grad().is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
    }
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.cfg;
    state.step += 1;
    let c1 = 1.0 - beta1.powf(state.step as f64);
    let c2 = 1.0 - beta2.powf(state.step as f64);
    let decay = 1.0 - lr * weight_decay;
    for (i, (_, t)) in store.iter_mut().enumerate() {
        let g = t.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in t.data_mut().iter_mut().enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            base_lr: 1e-3,
            min_lr: 1e-6,
            epochs: 200,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::Config(format!(
                "schedule needs 0 < min_lr <= base_lr, got {} and {}",
                self.min_lr, self.base_lr
            )));
        }
        Ok(())
    }
}

/// Cosine annealing from `base_lr` at epoch 0 to `min_lr` at the final epoch.
pub fn cosine_lr(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            total: cfg.epochs,
        });
    }
    if cfg.epochs == 0 {
        return Ok(cfg.base_lr);
    }
    let frac = epoch as f64 / cfg.epochs as f64;
    Ok(cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos()))
}
