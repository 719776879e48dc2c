use super::NnError;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. Defaults are the values commonly used in practice:
/// learning rate 1e-3, decay rates 0.9 / 0.999, epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Per-parameter Adam accumulators plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// Number of completed steps; bias correction uses `t + 1` internally.
    pub t: u64,
    /// First-moment (mean) estimates, one per parameter.
    pub m: Vec<f64>,
    /// Second-moment (uncentered variance) estimates, one per parameter.
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One Adam update over a flat parameter slice, with bias correction:
///
/// ```text
/// m <- b1 m + (1 - b1) g        m_hat = m / (1 - b1^t)
/// v <- b2 v + (1 - b2) g^2      v_hat = v / (1 - b2^t)
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// ```
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<(), NnError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(NnError::ShapeMismatch {
            context: "adam_step",
            expected: format!("{} gradients/state entries", params.len()),
            got: format!("grads {}, state {}", grads.len(), state.m.len()),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}
