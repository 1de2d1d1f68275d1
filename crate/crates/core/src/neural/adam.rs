//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::grad::Gradient;
use super::NetworkParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Gradient,
    pub v: Gradient,
}

impl AdamState {
    pub fn new(net: &NetworkParams, learning_rate: f64) -> AdamState {
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Gradient::zeros_like(net),
            v: Gradient::zeros_like(net),
        }
    }
}

/// One in-place Adam update; deterministic given its inputs.
pub fn adam_step(net: &mut NetworkParams, grad: &Gradient, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for j in 0..theta.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    };

    for l in 0..net.weights.len() {
        update(
            &mut net.weights[l],
            &grad.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        update(
            &mut net.biases[l],
            &grad.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
}
