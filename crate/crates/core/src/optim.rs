//! Decoupled-weight-decay adaptive optimizer with a linear-warmup +
//! cosine-decay learning-rate schedule. State threading is pure: `step`
//! consumes snapshots and returns new ones.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::model::ParamVector;

/// Config-facing optimizer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSettings {
    pub base_lr: f64,
    pub min_lr: f64,
    /// Fraction of total steps spent ramping up linearly; in [0, 1).
    pub warmup_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    /// Carry first/second moments across federated rounds instead of
    /// resetting them when local training restarts from the global model.
    pub persist_moments: bool,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            base_lr: 5e-5,
            min_lr: 1e-5,
            warmup_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            epsilon: 1e-8,
            persist_moments: false,
        }
    }
}

impl OptimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.min_lr > 0.0) {
            return Err(SpearError::invalid("learning rates must be positive"));
        }
        if self.min_lr > self.base_lr {
            return Err(SpearError::invalid("min_lr must not exceed base_lr"));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(SpearError::invalid("warmup_ratio must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(SpearError::invalid("betas must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(SpearError::invalid("weight_decay must be nonnegative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(SpearError::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Full optimizer state for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Completed steps; doubles as the schedule position.
    pub step_count: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl OptimState {
    /// Fresh moments positioned at `start_step` of a `total_steps`
    /// schedule.
    pub fn new(
        settings: &OptimSettings,
        dim: usize,
        total_steps: usize,
        start_step: usize,
    ) -> Result<Self> {
        settings.validate()?;
        if total_steps < 1 {
            return Err(SpearError::invalid("total_steps must be at least 1"));
        }
        if start_step > total_steps {
            return Err(SpearError::invalid(format!(
                "start_step {start_step} beyond total_steps {total_steps}"
            )));
        }
        Ok(OptimState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: start_step,
            base_lr: settings.base_lr,
            min_lr: settings.min_lr,
            warmup_ratio: settings.warmup_ratio,
            total_steps,
            beta1: settings.beta1,
            beta2: settings.beta2,
            weight_decay: settings.weight_decay,
            epsilon: settings.epsilon,
        })
    }

    fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).floor() as usize
    }
}

/// Schedule value at a step: linear 0 -> base_lr across the warmup span,
/// then cosine base_lr -> min_lr at total_steps.
pub fn lr_at(state: &OptimState, step: usize) -> Result<f64> {
    if step > state.total_steps {
        return Err(SpearError::invalid(format!(
            "step {step} out of schedule range 0..={}",
            state.total_steps
        )));
    }
    let w = state.warmup_steps();
    if step <= w {
        if w == 0 {
            return Ok(state.base_lr);
        }
        return Ok(state.base_lr * step as f64 / w as f64);
    }
    let progress = (step - w) as f64 / (state.total_steps - w) as f64;
    Ok(state.min_lr
        + 0.5 * (state.base_lr - state.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One bias-corrected moment update with decoupled multiplicative weight
/// decay. Returns the new parameter and state snapshots.
pub fn step(
    state: &OptimState,
    params: &ParamVector,
    grad: &ParamVector,
) -> Result<(ParamVector, OptimState)> {
    let dim = state.first_moment.len();
    if params.len() != dim {
        return Err(SpearError::DimensionMismatch { expected: dim, got: params.len() });
    }
    if grad.len() != dim {
        return Err(SpearError::DimensionMismatch { expected: dim, got: grad.len() });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(SpearError::numeric(format!(
            "gradient entry {i} is not finite: {}",
            grad.values()[i]
        )));
    }

    let mut next = state.clone();
    next.step_count = state.step_count + 1;
    let t = next.step_count;
    let lr = lr_at(state, t)?;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);

    let mut out = params.clone();
    let theta = out.values_mut();
    for j in 0..dim {
        let g = grad.values()[j];
        let m = state.beta1 * state.first_moment[j] + (1.0 - state.beta1) * g;
        let v = state.beta2 * state.second_moment[j] + (1.0 - state.beta2) * g * g;
        next.first_moment[j] = m;
        next.second_moment[j] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        theta[j] = theta[j] * (1.0 - lr * state.weight_decay) - lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok((out, next))
}
