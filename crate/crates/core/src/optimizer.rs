//! First-order optimizers for the gradient-estimating search variant.
//!
//! Steps are ascent steps: callers hand in an estimate of the gradient
//! of expected score and parameters move to increase it. State vectors
//! are stored as f32 alongside the parameters; per-element arithmetic
//! runs in f64 and rounds once on the way back.

use crate::error::{Error, Result};
use crate::vector::ParamVector;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub alpha: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { alpha: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid_config("adam alpha must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid_config(format!("adam {name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid_config("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Optimizer state, checkpointable. `Adam` tracks the step count for
/// bias correction plus first/second moment vectors; `Momentum` tracks a
/// velocity vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Adam { step: u64, m: Vec<f32>, v: Vec<f32> },
    Momentum { velocity: Vec<f32> },
}

impl OptimizerState {
    pub fn adam(dim: usize) -> Self {
        OptimizerState::Adam { step: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    pub fn momentum(dim: usize) -> Self {
        OptimizerState::Momentum { velocity: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            OptimizerState::Adam { m, .. } => m.len(),
            OptimizerState::Momentum { velocity } => velocity.len(),
        }
    }
}

/// One Adam ascent step:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `theta += alpha * mhat / (sqrt(vhat) + eps)` with the usual
/// `1 - b^t` bias corrections.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ParamVector,
    grad: &[f32],
    hyper: &AdamHyper,
) -> Result<()> {
    let OptimizerState::Adam { step, m, v } = state else {
        return Err(Error::invalid_config("adam_step needs Adam state"));
    };
    if m.len() != params.dim() || grad.len() != params.dim() {
        return Err(Error::DimensionMismatch { expected: params.dim(), got: grad.len() });
    }
    *step += 1;
    let t = *step as i32;
    let b1 = hyper.beta1 as f64;
    let b2 = hyper.beta2 as f64;
    let corr1 = 1.0 - b1.powi(t);
    let corr2 = 1.0 - b2.powi(t);
    let alpha = hyper.alpha as f64;
    let eps = hyper.epsilon as f64;
    for i in 0..grad.len() {
        let g = grad[i] as f64;
        let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
        let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let mhat = mi / corr1;
        let vhat = vi / corr2;
        let p = &mut params.as_mut_slice()[i];
        *p = (*p as f64 + alpha * mhat / (vhat.sqrt() + eps)) as f32;
    }
    Ok(())
}

/// One momentum ascent step: `vel <- mu vel + g`, `theta += lr * vel`.
pub fn momentum_step(
    state: &mut OptimizerState,
    params: &mut ParamVector,
    grad: &[f32],
    learning_rate: f32,
    momentum: f32,
) -> Result<()> {
    let OptimizerState::Momentum { velocity } = state else {
        return Err(Error::invalid_config("momentum_step needs Momentum state"));
    };
    if velocity.len() != params.dim() || grad.len() != params.dim() {
        return Err(Error::DimensionMismatch { expected: params.dim(), got: grad.len() });
    }
    let mu = momentum as f64;
    let lr = learning_rate as f64;
    for i in 0..grad.len() {
        let vel = mu * velocity[i] as f64 + grad[i] as f64;
        velocity[i] = vel as f32;
        let p = &mut params.as_mut_slice()[i];
        *p = (*p as f64 + lr * vel) as f32;
    }
    Ok(())
}
