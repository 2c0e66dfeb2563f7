//! AdamW with decoupled weight decay.
//!
//! ```text
//! m  = β1·m + (1-β1)·g
//! v  = β2·v + (1-β2)·g²
//! m̂ = m / (1-β1^t),  v̂ = v / (1-β2^t)
//! p  = p - lr·( m̂/(√v̂+ε) + λ·p )
//! ```
//!
//! The bias vector is never decayed.

use super::{Gradients, HeadModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One AdamW update of `params` in place. `step` is 1-based.
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hp: &AdamWParams,
    step: u64,
    decay: bool,
) {
    debug_assert!(step >= 1, "AdamW steps are 1-based");
    let t = step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let wd = if decay { hp.weight_decay } else { 0.0 };
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= hp.lr * (m_hat / (v_hat.sqrt() + hp.eps) + wd * params[i]);
    }
}

/// Moment state for a [`HeadModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    m_weights: Vec<f64>,
    v_weights: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
    step: u64,
}

impl AdamWState {
    pub fn new(model: &HeadModel) -> Self {
        Self {
            m_weights: vec![0.0; model.weights.len()],
            v_weights: vec![0.0; model.weights.len()],
            m_bias: vec![0.0; model.bias.len()],
            v_bias: vec![0.0; model.bias.len()],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut HeadModel, grads: &Gradients, hp: &AdamWParams) {
        self.step += 1;
        adamw_update(&mut model.weights, &grads.weights, &mut self.m_weights, &mut self.v_weights, hp, self.step, true);
        adamw_update(&mut model.bias, &grads.bias, &mut self.m_bias, &mut self.v_bias, hp, self.step, false);
    }
}
