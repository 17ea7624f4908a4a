use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mixer::QmixMixer;
use crate::envs::{
    observation_len, observe, Action, Controller, EnvState, GridSpec, JointAction, ACTION_COUNT,
};
use crate::error::{Error, Result};
use crate::nn::{argmax, checkpoint, Activation, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    Vdn,
    QmixMono,
}

impl MixerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::QmixMono => "qmix_mono",
        }
    }
}

impl std::str::FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdn" => Ok(MixerKind::Vdn),
            "qmix" | "qmix_mono" => Ok(MixerKind::QmixMono),
            other => Err(Error::config("mixer", format!("unknown mixer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mixer {
    Vdn,
    QmixMono(QmixMixer),
}

impl Mixer {
    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Vdn => MixerKind::Vdn,
            Mixer::QmixMono(_) => MixerKind::QmixMono,
        }
    }
}

/// Positions of all agents normalized to [0,1]², then one bit per item cell
/// of the layout (in cell order) marking whether it is still present.
pub fn global_state(spec: &GridSpec, state: &EnvState) -> Vec<f64> {
    let norm = |v: usize, extent: usize| if extent > 1 { v as f64 / (extent - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(global_state_len(spec));
    for p in &state.agent_positions {
        out.push(norm(p.row, spec.height));
        out.push(norm(p.col, spec.width));
    }
    out.extend(
        spec.items
            .keys()
            .map(|c| if state.remaining_items.contains_key(c) { 1.0 } else { 0.0 }),
    );
    out
}

pub fn global_state_len(spec: &GridSpec) -> usize {
    2 * spec.n_agents() + spec.items.len()
}

/// Per-agent Q networks plus a mixer; decentralized greedy execution.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    pub(crate) agent_nets: Vec<Mlp>,
    pub(crate) mixer: Mixer,
    observation_len: usize,
    global_state_len: usize,
}

impl JointPolicy {
    pub fn new(agent_nets: Vec<Mlp>, mixer: Mixer, global_state_len: usize) -> Result<Self> {
        let Some(first) = agent_nets.first() else {
            return Err(Error::ShapeMismatch("policy needs at least one agent".into()));
        };
        let observation_len = first.input_dim();
        for net in &agent_nets {
            if net.input_dim() != observation_len || net.output_dim() != ACTION_COUNT {
                return Err(Error::ShapeMismatch(format!(
                    "agent net {:?} does not map {observation_len} inputs to {ACTION_COUNT} actions",
                    net.layer_dims()
                )));
            }
        }
        if let Mixer::QmixMono(m) = &mixer {
            if m.n_agents != agent_nets.len() || m.hypernet.input_dim() != global_state_len {
                return Err(Error::ShapeMismatch("mixer does not match agents/global state".into()));
            }
        }
        Ok(JointPolicy {
            agent_nets,
            mixer,
            observation_len,
            global_state_len,
        })
    }

    /// Randomly initialized policy sized for `spec`.
    pub fn random<R: Rng + ?Sized>(
        spec: &GridSpec,
        kind: MixerKind,
        hidden: &[usize],
        hyper_hidden: usize,
        embed: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let obs = observation_len(spec);
        let mut dims = vec![obs];
        dims.extend_from_slice(hidden);
        dims.push(ACTION_COUNT);
        let agent_nets = (0..spec.n_agents())
            .map(|_| Mlp::random(&dims, Activation::Relu, rng))
            .collect::<Result<Vec<_>>>()?;
        let g = global_state_len(spec);
        let mixer = match kind {
            MixerKind::Vdn => Mixer::Vdn,
            MixerKind::QmixMono => {
                let out = QmixMixer::hyper_output_len(spec.n_agents(), embed);
                let hyper = Mlp::random(&[g, hyper_hidden, out], Activation::Tanh, rng)?;
                Mixer::QmixMono(QmixMixer::new(hyper, spec.n_agents(), embed)?)
            }
        };
        Self::new(agent_nets, mixer, g)
    }

    pub fn n_agents(&self) -> usize {
        self.agent_nets.len()
    }

    pub fn observation_len(&self) -> usize {
        self.observation_len
    }

    pub fn global_state_len(&self) -> usize {
        self.global_state_len
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    pub fn mixer_kind(&self) -> MixerKind {
        self.mixer.kind()
    }

    pub fn agent_net(&self, agent: usize) -> Result<&Mlp> {
        self.agent_nets
            .get(agent)
            .ok_or_else(|| Error::domain(format!("no agent with index {agent}")))
    }

    pub fn agent_nets(&self) -> &[Mlp] {
        &self.agent_nets
    }

    /// Checks the policy was built for `spec`.
    pub fn check_spec(&self, spec: &GridSpec) -> Result<()> {
        if spec.n_agents() != self.n_agents()
            || observation_len(spec) != self.observation_len
            || global_state_len(spec) != self.global_state_len
        {
            return Err(Error::ShapeMismatch(format!(
                "policy ({} agents, obs {}, global {}) does not fit layout {:?}",
                self.n_agents(),
                self.observation_len,
                self.global_state_len,
                spec.name
            )));
        }
        Ok(())
    }

    pub fn agent_values(&self, observation: &[f64], agent: usize) -> Result<Vec<f64>> {
        self.agent_net(agent)?.forward(observation)
    }

    pub fn greedy_joint_action(&self, spec: &GridSpec, state: &EnvState) -> Result<JointAction> {
        (0..self.n_agents())
            .map(|n| {
                let obs = observe(spec, state, n)?;
                Ok(Action::ALL[argmax(&self.agent_values(&obs, n)?)])
            })
            .collect::<Result<Vec<_>>>()
            .map(JointAction)
    }

    /// Mixes one chosen value per agent into the team value.
    pub fn mix(&self, chosen: &[f64], global: &[f64]) -> Result<f64> {
        if chosen.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents(),
                got: chosen.len(),
            });
        }
        match &self.mixer {
            Mixer::Vdn => Ok(chosen.iter().sum()),
            Mixer::QmixMono(m) => m.mix(chosen, global),
        }
    }

    fn all_agent_values(&self, spec: &GridSpec, state: &EnvState) -> Result<Vec<Vec<f64>>> {
        (0..self.n_agents())
            .map(|n| self.agent_values(&observe(spec, state, n)?, n))
            .collect()
    }

    pub fn q_total(&self, spec: &GridSpec, state: &EnvState, action: &JointAction) -> Result<f64> {
        if action.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents(),
                got: action.len(),
            });
        }
        let values = self.all_agent_values(spec, state)?;
        let chosen: Vec<f64> = values.iter().zip(&action.0).map(|(v, a)| v[a.index()]).collect();
        self.mix(&chosen, &global_state(spec, state))
    }

    /// Q_total with agent `agent` switched to each alternative action while
    /// the others keep theirs; entry `a'` is the value for action index `a'`.
    pub fn counterfactual_values(
        &self,
        spec: &GridSpec,
        state: &EnvState,
        action: &JointAction,
        agent: usize,
    ) -> Result<Vec<f64>> {
        self.agent_net(agent)?;
        if action.len() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents(),
                got: action.len(),
            });
        }
        let values = self.all_agent_values(spec, state)?;
        let global = global_state(spec, state);
        let mut chosen: Vec<f64> = values.iter().zip(&action.0).map(|(v, a)| v[a.index()]).collect();
        (0..ACTION_COUNT)
            .map(|alt| {
                chosen[agent] = values[agent][alt];
                self.mix(&chosen, &global)
            })
            .collect()
    }

    /// SHA-256 over the serialized networks, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.mixer_kind().as_str().as_bytes());
        for net in &self.agent_nets {
            hasher.update(checkpoint::to_bytes(net));
        }
        if let Mixer::QmixMono(m) = &self.mixer {
            hasher.update(checkpoint::to_bytes(&m.hypernet));
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Controller for JointPolicy {
    fn joint_action(&self, spec: &GridSpec, state: &EnvState) -> Result<JointAction> {
        self.greedy_joint_action(spec, state)
    }
}
