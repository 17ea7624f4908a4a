//! Centralized TD training of the joint value (VDN / monotone QMIX) with a
//! replay buffer, target networks, double-Q targets, and ε-greedy behaviour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::joint::{global_state, JointPolicy, Mixer, MixerKind};
use crate::envs::{observe, reset, step, Action, GridSpec, JointAction, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::nn::{adam_step, argmax, AdamState, Gradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    /// Training discount; independent of the undiscounted certification return.
    pub gamma: f64,
    /// Gradient updates between target-network syncs.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub reward_scale: f64,
    pub grad_clip: f64,
    /// Std of Gaussian noise added to the learner's copies of sampled
    /// observations; 0 disables augmentation. Acting uses clean observations.
    pub observation_noise: f64,
    pub hidden: Vec<usize>,
    pub hyper_hidden: usize,
    pub mixer_embed: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 400,
            batch_size: 32,
            replay_capacity: 20_000,
            learning_rate: 1e-3,
            gamma: 0.99,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 250,
            warmup: 500,
            train_every: 1,
            reward_scale: 0.1,
            grad_clip: 10.0,
            observation_noise: 0.0,
            hidden: vec![64],
            hyper_hidden: 32,
            mixer_embed: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("target_sync", self.target_sync),
            ("train_every", self.train_every),
            ("hyper_hidden", self.hyper_hidden),
            ("mixer_embed", self.mixer_embed),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("train.{field}"), "must be positive"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("train.gamma", "must lie in (0, 1]"));
        }
        for (field, v) in [
            ("learning_rate", self.learning_rate),
            ("reward_scale", self.reward_scale),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("train.{field}"), "must be positive"));
            }
        }
        if !(self.observation_noise >= 0.0 && self.observation_noise.is_finite()) {
            return Err(Error::config("train.observation_noise", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::config("train.epsilon", "must lie in [0, 1]"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("train.hidden", "layer sizes must be positive"));
        }
        Ok(())
    }

    fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub policy: JointPolicy,
    /// Undiscounted team return of every behaviour episode.
    pub episode_rewards: Vec<f64>,
    pub updates: usize,
}

#[derive(Clone)]
struct Transition {
    obs: Vec<Vec<f64>>,
    global: Vec<f64>,
    actions: Vec<usize>,
    reward: f64,
    next_obs: Vec<Vec<f64>>,
    next_global: Vec<f64>,
    done: bool,
}

struct Replay {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl Replay {
    fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }
}

struct Learner {
    online: JointPolicy,
    target: JointPolicy,
    agent_opt: Vec<AdamState>,
    hyper_opt: Option<AdamState>,
}

impl Learner {
    fn mix_with(policy: &JointPolicy, chosen: &[f64], global: &[f64]) -> Result<f64> {
        policy.mix(chosen, global)
    }

    /// One minibatch update; returns the mean squared TD error.
    fn update(&mut self, batch: &[&Transition], gamma: f64, clip: f64) -> Result<f64> {
        let n_agents = self.online.n_agents();
        let mut agent_grads: Vec<Gradients> =
            self.online.agent_nets.iter().map(Gradients::zeros_like).collect();
        let mut hyper_grads = match &self.online.mixer {
            Mixer::QmixMono(m) => Some(Gradients::zeros_like(&m.hypernet)),
            Mixer::Vdn => None,
        };
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;

        for t in batch {
            let mut bootstrap = 0.0;
            if !t.done {
                let mut next_vals = Vec::with_capacity(n_agents);
                for n in 0..n_agents {
                    let online_q = self.online.agent_nets[n].forward(&t.next_obs[n])?;
                    let target_q = self.target.agent_nets[n].forward(&t.next_obs[n])?;
                    next_vals.push(target_q[argmax(&online_q)]);
                }
                bootstrap = gamma * Self::mix_with(&self.target, &next_vals, &t.next_global)?;
            }
            let y = t.reward + bootstrap;

            let traces = (0..n_agents)
                .map(|n| self.online.agent_nets[n].forward_trace(&t.obs[n]))
                .collect::<Result<Vec<_>>>()?;
            let chosen: Vec<f64> =
                traces.iter().zip(&t.actions).map(|(tr, &a)| tr.output()[a]).collect();
            let q_tot = Self::mix_with(&self.online, &chosen, &t.global)?;
            let td = q_tot - y;
            loss += td * td * scale;
            let upstream = 2.0 * td * scale;

            let dq = match (&self.online.mixer, hyper_grads.as_mut()) {
                (Mixer::QmixMono(m), Some(hg)) => {
                    let (g, dq) = m.mix_backward(&chosen, &t.global, upstream)?;
                    hg.accumulate(&g);
                    dq
                }
                _ => vec![upstream; n_agents],
            };
            for n in 0..n_agents {
                let mut out_grad = vec![0.0; ACTION_COUNT];
                out_grad[t.actions[n]] = dq[n];
                let (g, _) = self.online.agent_nets[n].backward_trace(&traces[n], &out_grad)?;
                agent_grads[n].accumulate(&g);
            }
        }

        let total_norm = agent_grads
            .iter()
            .chain(hyper_grads.iter())
            .map(|g| g.norm().powi(2))
            .sum::<f64>()
            .sqrt();
        if total_norm > clip {
            let f = clip / total_norm;
            agent_grads.iter_mut().for_each(|g| g.scale(f));
            if let Some(g) = hyper_grads.as_mut() {
                g.scale(f);
            }
        }
        for ((net, g), opt) in self
            .online
            .agent_nets
            .iter_mut()
            .zip(&agent_grads)
            .zip(&mut self.agent_opt)
        {
            adam_step(net, g, opt)?;
        }
        if let (Mixer::QmixMono(m), Some(g), Some(opt)) =
            (&mut self.online.mixer, &hyper_grads, self.hyper_opt.as_mut())
        {
            adam_step(&mut m.hypernet, g, opt)?;
        }
        Ok(loss)
    }
}

fn epsilon_greedy(
    policy: &JointPolicy,
    obs: &[Vec<f64>],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    (0..policy.n_agents())
        .map(|n| {
            if rng.random::<f64>() < epsilon {
                Ok(rng.random_range(0..ACTION_COUNT))
            } else {
                Ok(argmax(&policy.agent_values(&obs[n], n)?))
            }
        })
        .collect()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn observe_all(spec: &GridSpec, state: &crate::envs::EnvState) -> Result<Vec<Vec<f64>>> {
    (0..spec.n_agents()).map(|n| observe(spec, state, n)).collect()
}

/// Trains a joint policy on `spec`. A fixed seed gives bit-identical output.
pub fn train(spec: &GridSpec, config: &TrainConfig, kind: MixerKind) -> Result<TrainReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let policy = JointPolicy::random(
        spec,
        kind,
        &config.hidden,
        config.hyper_hidden,
        config.mixer_embed,
        &mut rng,
    )?;
    let agent_opt = policy
        .agent_nets
        .iter()
        .map(|n| AdamState::new(n, config.learning_rate))
        .collect();
    let hyper_opt = match &policy.mixer {
        Mixer::QmixMono(m) => Some(AdamState::new(&m.hypernet, config.learning_rate)),
        Mixer::Vdn => None,
    };
    let mut learner = Learner {
        target: policy.clone(),
        online: policy,
        agent_opt,
        hyper_opt,
    };
    let mut replay = Replay {
        items: Vec::new(),
        capacity: config.replay_capacity,
        cursor: 0,
    };
    let mut episode_rewards = Vec::with_capacity(config.episodes);
    let mut env_steps = 0usize;
    let mut updates = 0usize;

    for episode in 0..config.episodes {
        let eps = config.epsilon(episode);
        let mut state = reset(spec)?;
        let mut total = 0.0;
        while !state.done {
            let obs = observe_all(spec, &state)?;
            let actions = epsilon_greedy(&learner.online, &obs, eps, &mut rng)?;
            let joint = JointAction(actions.iter().map(|&a| Action::ALL[a]).collect());
            let out = step(spec, &state, &joint)?;
            total += out.team_reward;
            replay.push(Transition {
                global: global_state(spec, &state),
                next_obs: observe_all(spec, &out.next_state)?,
                next_global: global_state(spec, &out.next_state),
                obs,
                actions,
                reward: out.team_reward * config.reward_scale,
                done: out.done,
            });
            state = out.next_state;
            env_steps += 1;

            if env_steps >= config.warmup
                && replay.items.len() >= config.batch_size
                && env_steps % config.train_every == 0
            {
                let mut batch: Vec<Transition> = (0..config.batch_size)
                    .map(|_| replay.items[rng.random_range(0..replay.items.len())].clone())
                    .collect();
                if config.observation_noise > 0.0 {
                    for t in &mut batch {
                        for v in t.obs.iter_mut().chain(t.next_obs.iter_mut()).flatten() {
                            *v += config.observation_noise * standard_normal(&mut rng);
                        }
                    }
                }
                let batch: Vec<&Transition> = batch.iter().collect();
                let loss = learner
                    .update(&batch, config.gamma, config.grad_clip)
                    .map_err(|e| Error::Divergence {
                        episode,
                        reason: e.to_string(),
                    })?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        episode,
                        reason: format!("loss {loss}"),
                    });
                }
                updates += 1;
                if updates % config.target_sync == 0 {
                    learner.target = learner.online.clone();
                }
            }
        }
        episode_rewards.push(total);
    }

    Ok(TrainReport {
        policy: learner.online,
        episode_rewards,
        updates,
    })
}

