use serde::{Deserialize, Serialize};

use crate::envs::{EnvState, GridSpec, JointAction, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::policy::JointPolicy;
use crate::smoothing::ActionTally;

/// Lower end of the normalized importance range.
pub const IF_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceFactors {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ImportanceFactors {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let normalized = normalize_importance(&raw);
        ImportanceFactors { raw, normalized }
    }

    /// Every agent weighted 1, which leaves p-values uncorrected.
    pub fn uniform(n_agents: usize) -> Self {
        ImportanceFactors {
            raw: vec![0.0; n_agents],
            normalized: vec![1.0; n_agents],
        }
    }
}

/// Min-max rescaling onto [IF_FLOOR, 1]; all-equal input maps to 1.
pub fn normalize_importance(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|&r| IF_FLOOR + (1.0 - IF_FLOOR) * (r - lo) / (hi - lo))
        .collect()
}

/// Q(s,a) minus the smoothed-frequency-weighted counterfactual baseline,
/// per agent. `counterfactual[n][a']` is Q with agent n switched to a'.
pub fn importance_from_values(
    q: f64,
    counterfactual: &[Vec<f64>],
    frequencies: &[[f64; ACTION_COUNT]],
) -> Result<ImportanceFactors> {
    if counterfactual.len() != frequencies.len() {
        return Err(Error::DimensionMismatch {
            expected: frequencies.len(),
            got: counterfactual.len(),
        });
    }
    let raw = counterfactual
        .iter()
        .zip(frequencies)
        .map(|(cf, freq)| q - cf.iter().zip(freq).map(|(v, p)| v * p).sum::<f64>())
        .collect::<Vec<_>>();
    if raw.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("importance factor".into()));
    }
    Ok(ImportanceFactors::from_raw(raw))
}

pub fn importance_factor(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    action: &JointAction,
    tally: &ActionTally,
) -> Result<ImportanceFactors> {
    if tally.n_agents() != policy.n_agents() {
        return Err(Error::DimensionMismatch {
            expected: policy.n_agents(),
            got: tally.n_agents(),
        });
    }
    let q = policy.q_total(spec, state, action)?;
    let counterfactual = (0..policy.n_agents())
        .map(|n| policy.counterfactual_values(spec, state, action, n))
        .collect::<Result<Vec<_>>>()?;
    let freqs: Vec<_> = (0..tally.n_agents()).map(|n| tally.frequencies(n)).collect();
    importance_from_values(q, &counterfactual, &freqs)
}
