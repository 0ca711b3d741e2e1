use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Linear warm-up to `peak_lr`, a flat hold, then exponential decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub hold_steps: u64,
    /// Multiplier per step after the hold.
    pub decay_rate: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup_steps: 200,
            hold_steps: 800,
            decay_rate: 0.9995,
        }
    }
}

impl LrSchedule {
    /// Learning rate of update number `step` (the first update is step 1).
    pub fn lr(&self, step: u64) -> f64 {
        let (w, h) = (self.warmup_steps, self.hold_steps);
        if step < w {
            self.peak_lr * step as f64 / w as f64
        } else if step <= w + h {
            self.peak_lr
        } else {
            self.peak_lr * self.decay_rate.powf((step - w - h) as f64)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::invalid("schedule.peak_lr must be positive"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::invalid("schedule.decay_rate must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// First moment.
    pub m: ModelParams,
    /// Second moment.
    pub v: ModelParams,
    /// Updates applied so far.
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        let m = params.zeros_like();
        let v = params.zeros_like();
        Self {
            params,
            m,
            v,
            step: 0,
            seed,
        }
    }
}

/// Scales `grads` to norm `max_norm` when larger; returns the norm before
/// clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One bias-corrected Adam update at `schedule.lr(step + 1)`.
///
/// Parameters and moments are kept `f32`-representable so that a run resumed
/// from a checkpoint continues bit-identically.
pub fn adam_step(state: &mut TrainState, grads: &ModelParams, schedule: &LrSchedule, adam: &AdamConfig) -> Result<f64> {
    if grads.config != state.params.config {
        return Err(Error::invalid("gradient shapes do not match the parameters"));
    }
    grads.all_finite().map_err(|tensor| Error::NonFinite { tensor })?;
    let t = state.step + 1;
    let lr = schedule.lr(t);
    let bc1 = 1.0 - adam.beta1.powf(t as f64);
    let bc2 = 1.0 - adam.beta2.powf(t as f64);
    let g_all = grads.tensors();
    let m_all = state.m.slices_mut();
    let v_all = state.v.slices_mut();
    let p_all = state.params.slices_mut();
    for (((p, m), v), g) in p_all.into_iter().zip(m_all).zip(v_all).zip(&g_all) {
        for i in 0..p.len() {
            let gi = g.data[i];
            let mi = f64::from((adam.beta1 * m[i] + (1.0 - adam.beta1) * gi) as f32);
            let vi = f64::from((adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi) as f32);
            m[i] = mi;
            v[i] = vi;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + adam.eps);
            p[i] = f64::from((p[i] - update) as f32);
        }
    }
    state.step = t;
    Ok(lr)
}
