//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use crate::driver::Tensors;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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
            weight_decay: 0.05,
        }
    }
}

/// First/second moment estimates per tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Tensors) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        OptimizerState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

/// One AdamW update in place. Decay `w ← w − lr·wd·w` is applied to the
/// pre-update weights, independently of the moment-based step.
pub fn adamw_step(
    params: &mut Tensors,
    grads: &Tensors,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let grads = grads.slices();
    let mut weights = params.slices_mut();
    if grads.len() != weights.len() || state.first_moment.len() != weights.len() {
        return Err(Error::InvalidArgument(
            "optimizer tensor count mismatch".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, w) in weights.iter_mut().enumerate() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        if g.len() != w.len() || m.len() != w.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer tensor",
                expected: w.len(),
                got: g.len(),
            });
        }
        for k in 0..w.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let decayed = w[k] - lr * cfg.weight_decay * w[k];
            w[k] = decayed - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "schedule step {step} outside 0..={total_steps}"
        )));
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}
