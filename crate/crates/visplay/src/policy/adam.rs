//! Adam optimizer with bias correction; the exact update rule recorded in
//! the run manifest.

use super::Tensors;
use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Tensors,
    pub v: Tensors,
    pub t: u64,
}

impl AdamState {
    pub fn new(dims: super::PolicyDims) -> Self {
        AdamState {
            m: Tensors::zeros(dims),
            v: Tensors::zeros(dims),
            t: 0,
        }
    }
}

/// One Adam step in place:
///   t += 1
///   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
///   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
pub fn apply_update(params: &mut Tensors, grad: &Tensors, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..params.data.len() {
        let g = grad.data[i];
        state.m.data[i] = BETA1 * state.m.data[i] + (1.0 - BETA1) * g;
        state.v.data[i] = BETA2 * state.v.data[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m.data[i] / bc1;
        let v_hat = state.v.data[i] / bc2;
        params.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}
