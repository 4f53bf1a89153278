//! Adam optimizer and the stepwise learning-rate schedule used by the
//! training simulations.
//!
//! Optimizer state is kept in binary32 to mirror the training environment
//! being simulated; double-precision state would mask the instabilities under
//! study. NaN gradients propagate into the parameters by design — the NaN
//! monitor in the runners halts before the update when asked to.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("length mismatch: params {params}, grads {grads}, moments {moments}")]
    ShapeMismatch { params: usize, grads: usize, moments: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// First-moment estimate, shape-matched to the parameters.
    pub m: Vec<f32>,
    /// Second-moment estimate, shape-matched to the parameters.
    pub v: Vec<f32>,
    /// Completed step count.
    pub t: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Current learning rate; runners refresh it from the schedule each step.
    pub lr: f32,
}

impl AdamState {
    /// Defaults beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(param_count: usize, lr: f32) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

/// One bias-corrected Adam update, in place and in binary32.
///
/// Deterministic given (state, params, grads). With finite inputs and
/// eps > 0 it introduces no NaN; NaN gradients propagate into the parameters.
pub fn adam_step(state: &mut AdamState, params: &mut [f32], grads: &[f32]) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(OptimError::ShapeMismatch {
            params: params.len(),
            grads: grads.len(),
            moments: state.m.len(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t.min(i32::MAX as u64) as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant { value: f32 },
    /// base * factor^floor(t / every)
    Step { base: f32, factor: f32, every: u64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::InvalidSchedule(msg));
        match *self {
            LrSchedule::Constant { value } => {
                if !(value.is_finite() && value > 0.0) {
                    return bad(format!("constant lr must be positive and finite, got {value}"));
                }
            }
            LrSchedule::Step { base, factor, every } => {
                if !(base.is_finite() && base > 0.0) {
                    return bad(format!("step base must be positive and finite, got {base}"));
                }
                if !(factor > 0.0 && factor <= 1.0) {
                    return bad(format!("step factor must lie in (0, 1], got {factor}"));
                }
                if every == 0 {
                    return bad("step interval must be >= 1".to_string());
                }
            }
        }
        Ok(())
    }

    /// Learning rate at iteration t (decays applied in binary64, returned as
    /// binary32).
    pub fn lr_at(&self, t: u64) -> f32 {
        match *self {
            LrSchedule::Constant { value } => value,
            LrSchedule::Step { base, factor, every } => {
                let k = (t / every).min(i32::MAX as u64) as i32;
                (f64::from(base) * f64::from(factor).powi(k)) as f32
            }
        }
    }
}
