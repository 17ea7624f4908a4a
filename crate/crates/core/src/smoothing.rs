//! Monte Carlo estimate of the smoothed policy: every agent's observation is
//! perturbed with its own Gaussian noise, M times, and greedy actions are
//! tallied. Joint (top-two joint action) and per-agent radii are derived from
//! the tallies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{observe, Action, EnvState, GridSpec, JointAction, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::nn::{argmax, Mlp, Scratch};
use crate::policy::JointPolicy;
use crate::stats::{
    acklam, binom_pvalue_two_sided, goodman_a, goodman_bounds, goodman_interval,
    std_normal_quantile,
};

/// Samples per parallel work unit. Fixed so the reduction order never
/// depends on the thread count.
const CHUNK: u64 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub samples: u64,
    pub alpha: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma: f64, samples: u64, alpha: f64, seed: u64) -> Result<Self> {
        let cfg = NoiseConfig { sigma, samples, alpha, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if self.samples < 2 {
            return Err(Error::config("samples", "need at least 2 samples"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Identifies one noise vector: the draw for `agent` in Monte Carlo sample
/// `sample` at environment step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub step: u64,
    pub sample: u64,
    pub agent: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl NoiseKey {
    fn prefix(&self) -> u64 {
        [self.step, self.sample, self.agent]
            .iter()
            .fold(mix64(self.seed), |h, &v| mix64(h ^ v))
    }
}

/// Fills `out` with σ·N(0,1) draws from the stream named by `key`.
/// Component i depends only on (key, i).
pub fn fill_gaussian_noise(out: &mut [f64], sigma: f64, key: NoiseKey) {
    let prefix = key.prefix();
    for (i, v) in out.iter_mut().enumerate() {
        let bits = mix64(prefix ^ (i as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
        let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        *v = sigma * acklam(u);
    }
}

pub fn gaussian_noise(dim: usize, sigma: f64, key: NoiseKey) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_gaussian_noise(&mut out, sigma, key);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCount {
    pub action: JointAction,
    pub count: u64,
}

/// Action counts over M smoothing samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTally {
    /// `per_agent[n][a]`: how often agent n chose action a.
    pub per_agent: Vec<[u64; ACTION_COUNT]>,
    /// Observed joint actions, sorted by action.
    pub joint: Vec<JointCount>,
    pub samples: u64,
}

impl ActionTally {
    pub fn n_agents(&self) -> usize {
        self.per_agent.len()
    }

    /// Builds a tally from per-agent counts alone; the joint table is left empty.
    pub fn from_per_agent(per_agent: Vec<[u64; ACTION_COUNT]>) -> Result<Self> {
        let samples = per_agent.first().map(|r| r.iter().sum()).unwrap_or(0);
        if per_agent.iter().any(|r| r.iter().sum::<u64>() != samples) || samples == 0 {
            return Err(Error::domain("every agent row must sum to the same positive M"));
        }
        Ok(ActionTally { per_agent, joint: Vec::new(), samples })
    }

    /// (modal, runner-up) action indices of one agent with their counts.
    /// Ties go to the lower index; a runner-up may have count 0.
    pub fn top_two(&self, agent: usize) -> ((usize, u64), (usize, u64)) {
        top_two(&self.per_agent[agent])
    }

    pub fn modal_action(&self) -> JointAction {
        JointAction(
            (0..self.n_agents())
                .map(|n| Action::ALL[self.top_two(n).0 .0])
                .collect(),
        )
    }

    pub fn frequencies(&self, agent: usize) -> [f64; ACTION_COUNT] {
        self.per_agent[agent].map(|c| c as f64 / self.samples as f64)
    }
}

fn top_two(counts: &[u64; ACTION_COUNT]) -> ((usize, u64), (usize, u64)) {
    let first = argmax_count(counts, None);
    let second = argmax_count(counts, Some(first));
    ((first, counts[first]), (second, counts[second]))
}

fn argmax_count(counts: &[u64], skip: Option<usize>) -> usize {
    let mut best = usize::MAX;
    for (i, &c) in counts.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if best == usize::MAX || c > counts[best] {
            best = i;
        }
    }
    best
}

fn encode(actions: &[usize]) -> u64 {
    actions.iter().fold(0u64, |code, &a| code * ACTION_COUNT as u64 + a as u64)
}

fn decode(mut code: u64, n: usize) -> JointAction {
    let mut idx = vec![0; n];
    for slot in idx.iter_mut().rev() {
        *slot = (code % ACTION_COUNT as u64) as usize;
        code /= ACTION_COUNT as u64;
    }
    JointAction(idx.into_iter().map(|a| Action::ALL[a]).collect())
}

struct Partial {
    per_agent: Vec<[u64; ACTION_COUNT]>,
    joint: BTreeMap<u64, u64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        for (row, o) in self.per_agent.iter_mut().zip(&other.per_agent) {
            row.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        for (k, v) in other.joint {
            *self.joint.entry(k).or_insert(0) += v;
        }
        self
    }
}

fn check_observations(policy: &JointPolicy, observations: &[Vec<f64>]) -> Result<()> {
    if observations.len() != policy.n_agents() {
        return Err(Error::DimensionMismatch {
            expected: policy.n_agents(),
            got: observations.len(),
        });
    }
    for obs in observations {
        if obs.len() != policy.observation_len() {
            return Err(Error::DimensionMismatch {
                expected: policy.observation_len(),
                got: obs.len(),
            });
        }
    }
    Ok(())
}

/// Smoothed tally for explicit (possibly already perturbed) observations.
/// Noise for agent n in sample m is the stream (seed, step, m, n), so calling
/// this on shifted observations reuses the certification noise exactly.
pub fn tally_from_observations(
    policy: &JointPolicy,
    observations: &[Vec<f64>],
    step: u64,
    cfg: &NoiseConfig,
) -> Result<ActionTally> {
    cfg.validate()?;
    check_observations(policy, observations)?;
    let n = policy.n_agents();
    let chunks = cfg.samples.div_ceil(CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial {
                per_agent: vec![[0; ACTION_COUNT]; n],
                joint: BTreeMap::new(),
            };
            let mut scratch = Scratch::default();
            let mut buf = vec![0.0; policy.observation_len()];
            let mut chosen = vec![0usize; n];
            for m in c * CHUNK..((c + 1) * CHUNK).min(cfg.samples) {
                for (agent, obs) in observations.iter().enumerate() {
                    let a = noisy_action(
                        &policy.agent_nets()[agent],
                        obs,
                        &mut buf,
                        &mut scratch,
                        cfg,
                        NoiseKey { seed: cfg.seed, step, sample: m, agent: agent as u64 },
                    )?;
                    chosen[agent] = a;
                    part.per_agent[agent][a] += 1;
                }
                *part.joint.entry(encode(&chosen)).or_insert(0) += 1;
            }
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .reduce(Partial::merge)
        .expect("at least one chunk");
    Ok(ActionTally {
        per_agent: partial.per_agent,
        joint: partial
            .joint
            .into_iter()
            .map(|(code, count)| JointCount { action: decode(code, n), count })
            .collect(),
        samples: cfg.samples,
    })
}

fn noisy_action(
    net: &Mlp,
    obs: &[f64],
    buf: &mut [f64],
    scratch: &mut Scratch,
    cfg: &NoiseConfig,
    key: NoiseKey,
) -> Result<usize> {
    fill_gaussian_noise(buf, cfg.sigma, key);
    buf.iter_mut().zip(obs).for_each(|(b, o)| *b += o);
    let values = net.forward_into(buf, scratch)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("agent values under noise".into()));
    }
    Ok(argmax(values))
}

/// Smoothed action counts of a single agent, with the same noise stream
/// `tally_from_observations` would use for that agent.
pub fn agent_counts(
    policy: &JointPolicy,
    agent: usize,
    observation: &[f64],
    step: u64,
    cfg: &NoiseConfig,
) -> Result<[u64; ACTION_COUNT]> {
    cfg.validate()?;
    let net = policy.agent_net(agent)?;
    if observation.len() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: observation.len() });
    }
    let chunks = cfg.samples.div_ceil(CHUNK);
    let rows = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut row = [0u64; ACTION_COUNT];
            let mut scratch = Scratch::default();
            let mut buf = vec![0.0; observation.len()];
            for m in c * CHUNK..((c + 1) * CHUNK).min(cfg.samples) {
                let key = NoiseKey { seed: cfg.seed, step, sample: m, agent: agent as u64 };
                row[noisy_action(net, observation, &mut buf, &mut scratch, cfg, key)?] += 1;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = [0u64; ACTION_COUNT];
    for row in rows {
        out.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(out)
}

/// Tally at a state; the stream's step index is the state's step count.
pub fn sample_tally(
    policy: &JointPolicy,
    spec: &GridSpec,
    state: &EnvState,
    cfg: &NoiseConfig,
) -> Result<ActionTally> {
    if state.done {
        return Err(Error::InvalidStep("cannot certify a terminal state".into()));
    }
    policy.check_spec(spec)?;
    let observations = (0..policy.n_agents())
        .map(|n| observe(spec, state, n))
        .collect::<Result<Vec<_>>>()?;
    tally_from_observations(policy, &observations, state.step_count as u64, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedDecision {
    pub chosen: JointAction,
    /// Per agent for the per-agent variant; for the joint variant, the
    /// runner-up joint action.
    pub runner_up: JointAction,
    pub per_agent_radius: Vec<f64>,
    pub joint_radius: f64,
    pub certified: Vec<bool>,
}

/// σ/2·(Φ⁻¹(lower) − Φ⁻¹(upper)) clamped at 0.
pub(crate) fn gap_radius(sigma: f64, lower: f64, upper: f64) -> Result<f64> {
    if lower <= upper || lower <= 0.0 || upper >= 1.0 {
        return Ok(0.0);
    }
    let r = 0.5 * sigma * (std_normal_quantile(lower)? - std_normal_quantile(upper)?);
    Ok(r.max(0.0))
}

/// Radius from the top two joint actions, gated by a two-sided binomial test.
pub fn certify_joint(tally: &ActionTally, cfg: &NoiseConfig) -> Result<SmoothedDecision> {
    cfg.validate()?;
    let n = tally.n_agents();
    let mut ranked: Vec<&JointCount> = tally.joint.iter().collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.action.cmp(&b.action)));
    let Some(first) = ranked.first() else {
        return Err(Error::domain("tally has no joint counts"));
    };
    let (runner_up, ct2) = match ranked.get(1) {
        Some(jc) => (jc.action.clone(), jc.count),
        None => {
            // Lowest unobserved joint action.
            let modal = encode(&first.action.indices());
            let code = if modal == 0 { 1 } else { 0 };
            (decode(code, n), 0)
        }
    };
    let ct1 = first.count;
    let pv = binom_pvalue_two_sided(ct1, ct1 + ct2, 0.5)?;
    let mut radius = 0.0;
    if pv.get() <= cfg.alpha {
        let categories = (ACTION_COUNT as f64).powi(n as i32);
        let a = goodman_a(categories, cfg.alpha)?;
        let (lower, _) = goodman_interval(ct1, tally.samples, a);
        let (_, upper) = goodman_interval(ct2, tally.samples, a);
        radius = gap_radius(cfg.sigma, lower, upper)?;
    }
    Ok(SmoothedDecision {
        chosen: first.action.clone(),
        runner_up,
        per_agent_radius: vec![radius; n],
        joint_radius: radius,
        certified: vec![radius > 0.0; n],
    })
}

/// Per-agent radii from each agent's own Goodman box over its 5 actions.
pub fn per_agent_radii(tally: &ActionTally, cfg: &NoiseConfig) -> Result<SmoothedDecision> {
    cfg.validate()?;
    let mut chosen = Vec::new();
    let mut runner = Vec::new();
    let mut radii = Vec::new();
    for n in 0..tally.n_agents() {
        let ((m, _), (r, _)) = tally.top_two(n);
        let bounds = goodman_bounds(&tally.per_agent[n], cfg.alpha)?;
        radii.push(gap_radius(cfg.sigma, bounds.lower[m], bounds.upper[r])?);
        chosen.push(Action::ALL[m]);
        runner.push(Action::ALL[r]);
    }
    let certified: Vec<bool> = radii.iter().map(|&d| d > 0.0).collect();
    let joint_radius = radii
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    Ok(SmoothedDecision {
        chosen: JointAction(chosen),
        runner_up: JointAction(runner),
        per_agent_radius: radii,
        joint_radius: if joint_radius.is_finite() { joint_radius } else { 0.0 },
        certified,
    })
}
