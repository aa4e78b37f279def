//! Adam optimizer with a warmup / inverse-square-root learning rate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nn::ParamMap;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    /// Peak learning rate reached at the end of warmup.
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { peak_lr: 0.0004, warmup_steps: 25_000, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Learning rate at a 1-based step: linear warmup to the peak, then decay
/// with the inverse square root of the step count.
pub fn lr_at(step: u64, peak_lr: f64, warmup_steps: u64) -> f64 {
    assert!(step >= 1, "lr_at is 1-based");
    let s = step as f64;
    let w = warmup_steps.max(1) as f64;
    let ramp = s / w;
    let decay = math::sqrt(w / s);
    peak_lr * ramp.min(decay)
}

/// First and second moment buffers for one parameter.
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, slots: BTreeMap::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate the next `step` call will use.
    pub fn next_lr(&self) -> f64 {
        lr_at(self.step + 1, self.cfg.peak_lr, self.cfg.warmup_steps)
    }

    /// Apply one update from the gradients currently stored on the
    /// parameters, then clear them.  Parameters without a gradient (heads
    /// disabled this step) keep their moments untouched.
    pub fn step(&mut self, params: &ParamMap) -> Result<()> {
        self.step += 1;
        let lr = lr_at(self.step, self.cfg.peak_lr, self.cfg.warmup_steps);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        // Bias correction at the current step.
        let c1 = 1.0 - math::powf(b1, self.step as f64);
        let c2 = 1.0 - math::powf(b2, self.step as f64);
        for (name, p) in params.iter() {
            let Some(g) = p.grad() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(alloc::format!("non-finite gradient for {name}")));
            }
            let slot = self
                .slots
                .entry(name.clone())
                .or_insert_with(|| Slot { m: vec![0.0; p.len()], v: vec![0.0; p.len()] });
            p.update_data(|data| {
                for i in 0..data.len() {
                    let gi = g[i];
                    slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
                    slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
                    let mhat = slot.m[i] / c1;
                    let vhat = slot.v[i] / c2;
                    data[i] -= lr * mhat / (math::sqrt(vhat) + eps);
                }
            });
            p.zero_grad();
        }
        Ok(())
    }
}
