//! AdamW with a linear-warmup cosine schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::tape::Mat;
use crate::nn::ParamValues;

/// Optimizer, schedule and loop length for one training phase.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Candidate peak learning rates for [`super::lr_line_search`].
    pub lr_grid: Vec<f64>,
}

pub const PROBE_LR_GRID: [f64; 6] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1];
pub const FINETUNE_LR_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            iterations: 500,
            batch_size: 32,
            warmup_steps: 50,
            lr_grid: Vec::new(),
        }
    }
}

impl OptimConfig {
    pub fn probe_default() -> Self {
        OptimConfig {
            lr: 1e-1,
            lr_grid: PROBE_LR_GRID.to_vec(),
            ..Default::default()
        }
    }

    pub fn finetune_default() -> Self {
        OptimConfig {
            lr: 1e-3,
            lr_grid: FINETUNE_LR_GRID.to_vec(),
            ..Default::default()
        }
    }

    pub fn with_lr(&self, lr: f64) -> Self {
        OptimConfig { lr, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("eps must be positive and weight decay non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.iterations > 0 && self.warmup_steps >= self.iterations {
            return Err(Error::invalid(format!(
                "warmup_steps ({}) must be below iterations ({})",
                self.warmup_steps, self.iterations
            )));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        warmup_cosine(self.lr, step, self.warmup_steps, self.iterations)
    }
}

/// `lr·step/warmup` during warmup, then
/// `lr·0.5·(1 + cos(π·(step − warmup)/(iterations − warmup)))`.
pub fn warmup_cosine(lr_max: f64, step: usize, warmup: usize, iterations: usize) -> f64 {
    if step < warmup {
        lr_max * step as f64 / warmup as f64
    } else {
        let span = iterations.saturating_sub(warmup).max(1) as f64;
        lr_max * 0.5 * (1.0 + (PI * (step - warmup) as f64 / span).cos())
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Decoupled-weight-decay Adam over a subset of parameters.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u32,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: &OptimConfig) -> Self {
        AdamW {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update at learning rate `lr`. Only parameters present in `grads`
    /// move:
    ///
    /// ```text
    /// θ ← θ − lr·wd·θ
    /// m ← β1·m + (1 − β1)·g        v ← β2·v + (1 − β2)·g²
    /// θ ← θ − lr·(m / (1 − β1^t)) / (sqrt(v / (1 − β2^t)) + ε)
    /// ```
    pub fn step(&mut self, params: &mut ParamValues, grads: &ParamValues, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (path, g) in grads {
            let p: &mut Mat = params.get_mut(path).expect("gradient for unknown parameter");
            let st = self.state.entry(path.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.data.len()],
                v: vec![0.0; g.data.len()],
            });
            for i in 0..g.data.len() {
                let gi = g.data[i];
                let mut w = p.data[i];
                w -= lr * self.weight_decay * w;
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * gi;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                w -= lr * mhat / (vhat.sqrt() + self.eps);
                p.data[i] = w;
            }
        }
    }
}
