//! l2-bounded observation attacks on the smoothed policy, and a harness that
//! checks certificates against them.
//!
//! Attacks maximize the margin of the base agent network (best non-modal
//! value minus modal value) and then judge success on the smoothed decision,
//! evaluated with the same noise stream that produced the certificate.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{RewardCertificate, StateCertificate};
use crate::envs::{observe, reset, step, Action, EnvState, GridSpec, JointAction, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::nn::{argmax, Mlp};
use crate::policy::JointPolicy;
use crate::smoothing::{agent_counts, tally_from_observations, NoiseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Per-agent l2 budget.
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to 2.5·ε/steps.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { epsilon: 0.0, steps: 40, step_size: None, restarts: 5, seed: 0 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("attack.epsilon", "must be a finite non-negative number"));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::config("attack", "steps and restarts must be at least 1"));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("attack.step_size", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.steps as f64)
    }

    fn with_budget(&self, epsilon: f64, seed: u64) -> AttackConfig {
        AttackConfig { epsilon, seed, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// One vector per agent; agents that were not attacked get zeros. For a
    /// rollout, the perturbations of the last step.
    pub perturbations: Vec<Vec<f64>>,
    /// Whether the smoothed action of each agent differs from its
    /// unperturbed smoothed action (at any step, for a rollout).
    pub flipped: Vec<bool>,
    pub attacked_reward: Option<f64>,
    /// Agent-steps with a flipped action.
    pub flip_count: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `delta` back onto the l2 ball of radius `epsilon` if it left it.
pub fn project_l2(delta: &mut [f64], epsilon: f64) {
    let n = norm(delta);
    if n > epsilon {
        if epsilon == 0.0 {
            delta.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let f = epsilon / n;
        delta.iter_mut().for_each(|d| *d *= f);
    }
}

/// Margin of the strongest non-target action over `target`, and its input
/// gradient.
pub fn margin_and_gradient(net: &Mlp, input: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let trace = net.forward_trace(input)?;
    let values = trace.output();
    let mut best = usize::MAX;
    for a in 0..values.len() {
        if a != target && (best == usize::MAX || values[a] > values[best]) {
            best = a;
        }
    }
    let mut out_grad = vec![0.0; values.len()];
    out_grad[best] += 1.0;
    out_grad[target] -= 1.0;
    let margin = values[best] - values[target];
    let (_, input_grad) = net.backward_trace(&trace, &out_grad)?;
    Ok((margin, input_grad))
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn random_in_ball(dim: usize, radius: f64, rng: &mut ChaCha8Rng, surface: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            // Box-Muller; only the direction matters.
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let n = norm(&v).max(f64::MIN_POSITIVE);
    let r = if surface { radius } else { radius * rng.random::<f64>().powf(1.0 / dim as f64) };
    v.iter_mut().for_each(|x| *x *= r / n);
    project_l2(&mut v, radius);
    v
}

/// Projected normalized-gradient ascent on the margin against `target`.
/// The first restart starts from zero, later ones uniformly in the ball.
/// Returns the iterate with the largest margin.
pub fn pgd_perturbation(
    net: &Mlp,
    observation: &[f64],
    target: usize,
    cfg: &AttackConfig,
) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let dim = observation.len();
    let mut best = (vec![0.0; dim], margin_and_gradient(net, observation, target)?.0);
    if cfg.epsilon == 0.0 {
        return Ok(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step_size = cfg.step_size();
    for restart in 0..cfg.restarts {
        let mut delta = if restart == 0 {
            vec![0.0; dim]
        } else {
            random_in_ball(dim, cfg.epsilon, &mut rng, false)
        };
        for _ in 0..cfg.steps {
            let (margin, grad) = margin_and_gradient(net, &add(observation, &delta), target)?;
            if margin > best.1 {
                best = (delta.clone(), margin);
            }
            let g = norm(&grad);
            if g == 0.0 || !g.is_finite() {
                break;
            }
            delta.iter_mut().zip(&grad).for_each(|(d, gi)| *d += step_size * gi / g);
            project_l2(&mut delta, cfg.epsilon);
        }
        let (margin, _) = margin_and_gradient(net, &add(observation, &delta), target)?;
        if margin > best.1 {
            best = (delta, margin);
        }
    }
    Ok(best)
}

/// Gradient-free counterpart: best margin over random points on the sphere.
pub fn random_search_perturbation(
    net: &Mlp,
    observation: &[f64],
    target: usize,
    cfg: &AttackConfig,
) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let dim = observation.len();
    let mut best = (vec![0.0; dim], margin_and_gradient(net, observation, target)?.0);
    if cfg.epsilon == 0.0 {
        return Ok(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.steps * cfg.restarts {
        let delta = random_in_ball(dim, cfg.epsilon, &mut rng, true);
        let (margin, _) = margin_and_gradient(net, &add(observation, &delta), target)?;
        if margin > best.1 {
            best = (delta, margin);
        }
    }
    Ok(best)
}

type Perturber = fn(&Mlp, &[f64], usize, &AttackConfig) -> Result<(Vec<f64>, f64)>;

fn smoothed_action(
    policy: &JointPolicy,
    agent: usize,
    observation: &[f64],
    step: u64,
    noise: &NoiseConfig,
) -> Result<usize> {
    Ok(argmax_counts(&agent_counts(policy, agent, observation, step, noise)?))
}

fn argmax_counts(counts: &[u64; ACTION_COUNT]) -> usize {
    argmax(&counts.map(|c| c as f64))
}

fn attack_state_with(
    perturb: Perturber,
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    agent: usize,
    attack: &AttackConfig,
    noise: &NoiseConfig,
) -> Result<AttackResult> {
    let obs = observe(spec, state, agent)?;
    let net = policy.agent_net(agent)?;
    let step = state.step_count as u64;
    let certified = smoothed_action(policy, agent, &obs, step, noise)?;
    let (delta, _) = perturb(net, &obs, certified, attack)?;
    let attacked = smoothed_action(policy, agent, &add(&obs, &delta), step, noise)?;
    let mut perturbations = vec![vec![0.0; obs.len()]; policy.n_agents()];
    perturbations[agent] = delta;
    let mut flipped = vec![false; policy.n_agents()];
    flipped[agent] = attacked != certified;
    Ok(AttackResult {
        perturbations,
        flip_count: usize::from(flipped[agent]),
        flipped,
        attacked_reward: None,
    })
}

/// PGD against one agent's smoothed action at `state`.
pub fn pgd_attack_state(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    agent: usize,
    attack: &AttackConfig,
    noise: &NoiseConfig,
) -> Result<AttackResult> {
    attack_state_with(pgd_perturbation, policy, spec, state, agent, attack, noise)
}

pub fn random_search_attack_state(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    agent: usize,
    attack: &AttackConfig,
    noise: &NoiseConfig,
) -> Result<AttackResult> {
    attack_state_with(random_search_perturbation, policy, spec, state, agent, attack, noise)
}

/// Rollout of the smoothed policy with every agent's observation attacked
/// at every step.
pub fn attacked_rollout(
    policy: &JointPolicy,
    spec: &GridSpec,
    noise: &NoiseConfig,
    attack: &AttackConfig,
) -> Result<AttackResult> {
    attack.validate()?;
    policy.check_spec(spec)?;
    let n = policy.n_agents();
    let mut state = reset(spec)?;
    let mut total = 0.0;
    let mut flipped = vec![false; n];
    let mut flip_count = 0;
    let mut perturbations = vec![vec![0.0; policy.observation_len()]; n];
    while !state.done {
        let step_idx = state.step_count as u64;
        let obs = (0..n).map(|a| observe(spec, &state, a)).collect::<Result<Vec<_>>>()?;
        let clean = tally_from_observations(policy, &obs, step_idx, noise)?.modal_action();
        let mut attacked_obs = Vec::with_capacity(n);
        for a in 0..n {
            let cfg = attack.with_budget(attack.epsilon, derive_seed(attack.seed, &[step_idx, a as u64]));
            let (delta, _) = pgd_perturbation(&policy.agent_nets()[a], &obs[a], clean.0[a].index(), &cfg)?;
            attacked_obs.push(add(&obs[a], &delta));
            perturbations[a] = delta;
        }
        let chosen = if attack.epsilon == 0.0 {
            clean.clone()
        } else {
            tally_from_observations(policy, &attacked_obs, step_idx, noise)?.modal_action()
        };
        for a in 0..n {
            if chosen.0[a] != clean.0[a] {
                flipped[a] = true;
                flip_count += 1;
            }
        }
        let out = step(spec, &state, &chosen)?;
        total += out.team_reward;
        state = out.next_state;
    }
    Ok(AttackResult { perturbations, flipped, attacked_reward: Some(total), flip_count })
}

fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut rng_seed = seed ^ 0x5851_f42d_4c95_7f2d;
    for &p in parts {
        let mut r = ChaCha8Rng::seed_from_u64(rng_seed ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng_seed = r.random();
    }
    rng_seed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateValidation {
    pub step: usize,
    pub radius: Vec<f64>,
    pub in_ball_flips: Vec<usize>,
    pub out_ball_flips: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCheck {
    pub epsilon: f64,
    pub r_min: f64,
    pub attacked_reward: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub trials: usize,
    /// trials × states × agents, for each of the two budgets.
    pub total_trials: usize,
    /// Trials against certified agents at budget d_n.
    pub in_ball_trials: usize,
    pub in_ball_flips: usize,
    /// Trials against certified agents at budget 2·d_n.
    pub out_ball_trials: usize,
    pub out_ball_flips: usize,
    pub states: Vec<StateValidation>,
    pub reward_check: Option<RewardCheck>,
}

fn check_provenance(
    policy: &JointPolicy,
    spec: &GridSpec,
    certs: &[StateCertificate],
    reward: Option<&RewardCertificate>,
) -> Result<Option<NoiseConfig>> {
    let fingerprint = policy.fingerprint();
    let mut provs: Vec<_> = certs.iter().map(|c| &c.provenance).collect();
    if let Some(r) = reward {
        provs.push(&r.provenance);
    }
    let Some(first) = provs.first() else {
        return Ok(None);
    };
    for p in &provs {
        if p.policy != fingerprint {
            return Err(Error::Provenance("certificate was computed for a different policy".into()));
        }
        if p.spec != spec.name {
            return Err(Error::Provenance(format!(
                "certificate is for environment {:?}, not {:?}",
                p.spec, spec.name
            )));
        }
        if p.noise != first.noise {
            return Err(Error::Provenance("certificates use different noise settings".into()));
        }
    }
    Ok(Some(first.noise))
}

/// Attacks every agent of every certificate `trials` times at its certified
/// budget d_n and at 2·d_n, and optionally checks a reward certificate with
/// an attacked rollout at ε_cert.
pub fn validate_certificates(
    policy: &JointPolicy,
    spec: &GridSpec,
    certificates: &[StateCertificate],
    reward: Option<&RewardCertificate>,
    trials: usize,
    attack: &AttackConfig,
) -> Result<ValidationReport> {
    attack.validate()?;
    let noise = check_provenance(policy, spec, certificates, reward)?;
    let n = policy.n_agents();
    let mut report = ValidationReport {
        trials,
        total_trials: trials * certificates.len() * n,
        in_ball_trials: 0,
        in_ball_flips: 0,
        out_ball_trials: 0,
        out_ball_flips: 0,
        states: Vec::new(),
        reward_check: None,
    };
    for cert in certificates {
        let noise = noise.expect("certificates present");
        let step_idx = cert.state.step_count as u64;
        let mut sv = StateValidation {
            step: cert.step,
            radius: cert.result.per_agent_radius.clone(),
            in_ball_flips: vec![0; n],
            out_ball_flips: vec![0; n],
        };
        for agent in 0..n {
            let d = cert.result.per_agent_radius[agent];
            if d <= 0.0 {
                continue;
            }
            let obs = observe(spec, &cert.state, agent)?;
            let target = cert.modal.0[agent].index();
            let net = &policy.agent_nets()[agent];
            let mut seen: HashMap<Vec<u64>, bool> = HashMap::new();
            for (budget, inside) in [(d, true), (2.0 * d, false)] {
                for t in 0..trials {
                    let seed = derive_seed(attack.seed, &[step_idx, agent as u64, t as u64, inside as u64]);
                    let (delta, _) = pgd_perturbation(net, &obs, target, &attack.with_budget(budget, seed))?;
                    let key: Vec<u64> = delta.iter().map(|v| v.to_bits()).collect();
                    let flipped = match seen.get(&key) {
                        Some(&f) => f,
                        None => {
                            let a = smoothed_action(policy, agent, &add(&obs, &delta), step_idx, &noise)?;
                            let f = a != target;
                            seen.insert(key, f);
                            f
                        }
                    };
                    if inside {
                        report.in_ball_trials += 1;
                        sv.in_ball_flips[agent] += usize::from(flipped);
                    } else {
                        report.out_ball_trials += 1;
                        sv.out_ball_flips[agent] += usize::from(flipped);
                    }
                }
            }
        }
        report.in_ball_flips += sv.in_ball_flips.iter().sum::<usize>();
        report.out_ball_flips += sv.out_ball_flips.iter().sum::<usize>();
        report.states.push(sv);
    }
    if let Some(r) = reward {
        let noise = r.provenance.noise;
        let cfg = attack.with_budget(r.epsilon_cert, attack.seed);
        let out = attacked_rollout(policy, spec, &noise, &cfg)?;
        let attacked = out.attacked_reward.expect("rollout reward");
        report.reward_check = Some(RewardCheck {
            epsilon: r.epsilon_cert,
            r_min: r.r_min,
            attacked_reward: attacked,
            violated: attacked < r.r_min - 1e-9 * (1.0 + r.r_min.abs()),
        });
    }
    Ok(report)
}

/// Convenience: the unattacked smoothed action of every agent.
pub fn smoothed_joint_action(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    noise: &NoiseConfig,
) -> Result<JointAction> {
    (0..policy.n_agents())
        .map(|a| {
            let obs = observe(spec, state, a)?;
            Ok(Action::ALL[smoothed_action(policy, a, &obs, state.step_count as u64, noise)?])
        })
        .collect::<Result<Vec<_>>>()
        .map(JointAction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_respects_budget() {
        let mut v = vec![3.0, 4.0];
        project_l2(&mut v, 1.0);
        assert!((norm(&v) - 1.0).abs() <= 1e-12);
        let mut w = vec![0.1, 0.1];
        project_l2(&mut w, 1.0);
        assert_eq!(w, vec![0.1, 0.1]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
    }
}
