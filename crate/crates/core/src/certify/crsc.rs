use serde::{Deserialize, Serialize};

use super::importance::{importance_factor, ImportanceFactors};
use super::Provenance;
use crate::envs::{Action, EnvState, GridSpec, JointAction};
use crate::error::Result;
use crate::policy::JointPolicy;
use crate::smoothing::{per_agent_radii, sample_tally, ActionTally, NoiseConfig};
use crate::stats::{
    bh_procedure, binom_lower_bound, binom_pvalue_one_sided, std_normal_quantile, PValue,
};

/// Outcome of importance-corrected BH selection for one tally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrscResult {
    pub pvalues: Vec<PValue>,
    pub corrected_pvalues: Vec<PValue>,
    /// 0 for agents that failed selection or whose radius clamps to 0.
    pub per_agent_radius: Vec<f64>,
    pub certified_set: Vec<usize>,
    pub min_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCertificate {
    pub provenance: Provenance,
    pub step: usize,
    pub state: EnvState,
    pub modal: JointAction,
    pub runner_up: JointAction,
    pub importance: ImportanceFactors,
    #[serde(flatten)]
    pub result: CrscResult,
}

impl StateCertificate {
    pub fn is_certified(&self) -> bool {
        !self.result.certified_set.is_empty()
    }
}

/// p-value of the modal count, corrected by the agent's normalized weight.
fn corrected(tally: &ActionTally, weights: &[f64]) -> Result<(Vec<PValue>, Vec<PValue>)> {
    let mut raw = Vec::with_capacity(tally.n_agents());
    let mut corr = Vec::with_capacity(tally.n_agents());
    for n in 0..tally.n_agents() {
        let ((_, ct1), _) = tally.top_two(n);
        let pv = binom_pvalue_one_sided(ct1, tally.samples, 0.5)?;
        corr.push(PValue::capped(pv.get() * weights[n])?);
        raw.push(pv);
    }
    Ok((raw, corr))
}

/// Importance-weighted BH selection followed by per-agent radii. Pure in
/// its inputs.
pub fn crsc_from_tally(tally: &ActionTally, weights: &[f64], cfg: &NoiseConfig) -> Result<CrscResult> {
    let (pvalues, corrected_pvalues) = corrected(tally, weights)?;
    let bh = bh_procedure(&corrected_pvalues, cfg.alpha);
    let decision = per_agent_radii(tally, cfg)?;
    let per_agent_radius: Vec<f64> = decision
        .per_agent_radius
        .iter()
        .zip(&bh.reject)
        .map(|(&d, &pass)| if pass { d } else { 0.0 })
        .collect();
    let certified_set: Vec<usize> = (0..per_agent_radius.len())
        .filter(|&n| per_agent_radius[n] > 0.0)
        .collect();
    let min_radius = certified_set
        .iter()
        .map(|&n| per_agent_radius[n])
        .fold(f64::INFINITY, f64::min);
    Ok(CrscResult {
        pvalues,
        corrected_pvalues,
        per_agent_radius,
        certified_set,
        min_radius: if min_radius.is_finite() { min_radius } else { 0.0 },
    })
}

pub(crate) fn provenance(policy: &JointPolicy, spec: &GridSpec, cfg: &NoiseConfig) -> Provenance {
    Provenance {
        spec: spec.name.clone(),
        policy: policy.fingerprint(),
        noise: *cfg,
    }
}

pub(crate) fn crsc_with_provenance(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    cfg: &NoiseConfig,
    provenance: &Provenance,
) -> Result<StateCertificate> {
    let tally = sample_tally(policy, spec, state, cfg)?;
    let modal = tally.modal_action();
    let runner_up = JointAction(
        (0..tally.n_agents())
            .map(|n| Action::ALL[tally.top_two(n).1 .0])
            .collect(),
    );
    let importance = importance_factor(policy, spec, state, &modal, &tally)?;
    let result = crsc_from_tally(&tally, &importance.normalized, cfg)?;
    Ok(StateCertificate {
        provenance: provenance.clone(),
        step: state.step_count,
        state: state.clone(),
        modal,
        runner_up,
        importance,
        result,
    })
}

/// Per-state certification with importance-corrected BH selection.
pub fn crsc(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    cfg: &NoiseConfig,
) -> Result<StateCertificate> {
    crsc_with_provenance(policy, spec, state, cfg, &provenance(policy, spec, cfg))
}

/// Search-node view of a state: candidate actions per agent and the radius
/// within which every agent stays inside its candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    /// Action indices per agent, modal first.
    pub action_sets: Vec<Vec<usize>>,
    pub agent_radius: Vec<f64>,
    pub radius: f64,
}

pub fn node_from_tally(tally: &ActionTally, weights: &[f64], cfg: &NoiseConfig) -> Result<NodeInfo> {
    let (_, corrected_pvalues) = corrected(tally, weights)?;
    let mut action_sets = Vec::with_capacity(tally.n_agents());
    let mut agent_radius = Vec::with_capacity(tally.n_agents());
    for (n, pv) in corrected_pvalues.iter().enumerate() {
        let ((m, ct1), (r, ct2)) = tally.top_two(n);
        let (set, k) = if pv.get() > cfg.alpha {
            let set = if ct2 > 0 { vec![m, r] } else { vec![m] };
            (set, ct1 + ct2)
        } else {
            (vec![m], ct1)
        };
        let lower = binom_lower_bound(k, tally.samples, cfg.alpha)?;
        let radius = if lower > 0.5 {
            (cfg.sigma * std_normal_quantile(lower)?).max(0.0)
        } else {
            0.0
        };
        action_sets.push(set);
        agent_radius.push(radius);
    }
    let radius = agent_radius.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NodeInfo { action_sets, agent_radius, radius })
}

pub fn get_node(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    cfg: &NoiseConfig,
) -> Result<NodeInfo> {
    let tally = sample_tally(policy, spec, state, cfg)?;
    let importance = importance_factor(policy, spec, state, &tally.modal_action(), &tally)?;
    node_from_tally(&tally, &importance.normalized, cfg)
}
