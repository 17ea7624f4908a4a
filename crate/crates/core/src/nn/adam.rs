use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let n = net.num_params();
        AdamState {
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let n = net.num_params();
    if state.first.len() != n || state.second.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: state.first.len(),
        });
    }
    let flat: Vec<f64> = grads.iter().copied().collect();
    if flat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: flat.len(),
        });
    }
    if flat.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, p) in net.params_mut().enumerate() {
        let g = flat[i];
        state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * g;
        state.second[i] = state.beta2 * state.second[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first[i] / c1;
        let v_hat = state.second[i] / c2;
        *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    if net.params().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("parameters after Adam step".into()));
    }
    Ok(())
}
