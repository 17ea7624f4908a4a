use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::crsc::{crsc_with_provenance, node_from_tally, provenance, NodeInfo, StateCertificate};
use super::importance::importance_factor;
use super::search::{tree_search, SearchOptions, SearchProblem, Transition};
use super::Provenance;
use crate::envs::{reset, step, EnvState, GridSpec, JointAction};
use crate::error::Result;
use crate::policy::JointPolicy;
use crate::smoothing::{sample_tally, NoiseConfig};

/// Tree search over a gridworld, expanding states through smoothing tallies.
pub struct GridProblem<'a> {
    pub policy: &'a JointPolicy,
    pub spec: &'a GridSpec,
    pub cfg: NoiseConfig,
    expanded_states: RefCell<usize>,
}

impl<'a> GridProblem<'a> {
    pub fn new(policy: &'a JointPolicy, spec: &'a GridSpec, cfg: NoiseConfig) -> Result<Self> {
        cfg.validate()?;
        policy.check_spec(spec)?;
        Ok(GridProblem { policy, spec, cfg, expanded_states: RefCell::new(0) })
    }

    /// Distinct states for which a tally was drawn.
    pub fn tallies_drawn(&self) -> usize {
        *self.expanded_states.borrow()
    }
}

impl SearchProblem for GridProblem<'_> {
    type State = EnvState;

    fn root(&self) -> Result<EnvState> {
        reset(self.spec)
    }

    fn expand(&self, state: &EnvState) -> Result<NodeInfo> {
        *self.expanded_states.borrow_mut() += 1;
        let tally = sample_tally(self.policy, self.spec, state, &self.cfg)?;
        let importance =
            importance_factor(self.policy, self.spec, state, &tally.modal_action(), &tally)?;
        node_from_tally(&tally, &importance.normalized, &self.cfg)
    }

    fn transition(&self, state: &EnvState, action: &[usize]) -> Result<Transition<EnvState>> {
        let out = step(self.spec, state, &JointAction::from_indices(action)?)?;
        Ok(Transition { state: out.next_state, reward: out.team_reward, done: out.done })
    }

    fn rewards_non_negative(&self) -> bool {
        self.spec.rewards_non_negative()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCertificate {
    pub provenance: Provenance,
    pub pruning: bool,
    pub epsilon_cert: f64,
    pub r_min: f64,
    /// Return of the smoothed policy's modal path without perturbation.
    pub clean_reward: f64,
    pub nodes_expanded: usize,
    pub nodes_pruned: usize,
    pub trajectories_completed: usize,
    pub memo_hits: usize,
    pub distinct_states: usize,
}

/// Reward lower bound under the minimal certified perturbation.
pub fn tcrgr(
    policy: &JointPolicy,
    spec: &GridSpec,
    cfg: &NoiseConfig,
    options: SearchOptions,
) -> Result<RewardCertificate> {
    let problem = GridProblem::new(policy, spec, *cfg)?;
    let out = tree_search(&problem, options)?;
    Ok(RewardCertificate {
        provenance: provenance(policy, spec, cfg),
        pruning: options.pruning,
        epsilon_cert: out.epsilon_cert,
        r_min: out.r_min,
        clean_reward: out.clean_reward,
        nodes_expanded: out.nodes_expanded,
        nodes_pruned: out.nodes_pruned,
        trajectories_completed: out.trajectories_completed,
        memo_hits: out.memo_hits,
        distinct_states: problem.tallies_drawn(),
    })
}

/// CRSC at every state of the unperturbed greedy rollout.
pub fn certify_trajectory(
    policy: &JointPolicy,
    spec: &GridSpec,
    cfg: &NoiseConfig,
) -> Result<Vec<StateCertificate>> {
    cfg.validate()?;
    policy.check_spec(spec)?;
    let prov = provenance(policy, spec, cfg);
    let mut state = reset(spec)?;
    let mut out = Vec::new();
    while !state.done {
        out.push(crsc_with_provenance(policy, spec, &state, cfg, &prov)?);
        let action = policy.greedy_joint_action(spec, &state)?;
        state = step(spec, &state, &action)?.next_state;
    }
    Ok(out)
}
