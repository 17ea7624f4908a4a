//! Policy checkpoints: a directory holding `manifest.toml` and one network
//! file per agent (plus the mixer hypernetwork for QMIX).
//!
//! ```toml
//! format = "marlcert-policy"
//! version = 1
//! agents = 2
//! mixer = "qmix_mono"          # or "vdn"
//! observation_len = 47
//! global_state_len = 22
//! actions = 5
//! mixer_embed = 8              # qmix_mono only
//! agent_nets = ["agent_0.mlp", "agent_1.mlp"]
//! hypernet = "hypernet.mlp"    # qmix_mono only
//! ```
//!
//! Network files use the binary layout documented in `nn::checkpoint`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::joint::{JointPolicy, Mixer, MixerKind};
use super::mixer::QmixMixer;
use crate::envs::ACTION_COUNT;
use crate::error::{Error, Result};
use crate::nn::{checkpoint_load, checkpoint_save};

pub const MANIFEST: &str = "manifest.toml";
const FORMAT: &str = "marlcert-policy";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub format: String,
    pub version: u32,
    pub agents: usize,
    pub mixer: MixerKind,
    pub observation_len: usize,
    pub global_state_len: usize,
    pub actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixer_embed: Option<usize>,
    pub agent_nets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypernet: Option<String>,
}

impl JointPolicy {
    pub fn manifest(&self) -> PolicyManifest {
        let (embed, hyper) = match &self.mixer {
            Mixer::Vdn => (None, None),
            Mixer::QmixMono(m) => (Some(m.embed), Some("hypernet.mlp".to_string())),
        };
        PolicyManifest {
            format: FORMAT.into(),
            version: VERSION,
            agents: self.n_agents(),
            mixer: self.mixer_kind(),
            observation_len: self.observation_len(),
            global_state_len: self.global_state_len(),
            actions: ACTION_COUNT,
            mixer_embed: embed,
            agent_nets: (0..self.n_agents()).map(|n| format!("agent_{n}.mlp")).collect(),
            hypernet: hyper,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        for (net, file) in self.agent_nets.iter().zip(&manifest.agent_nets) {
            checkpoint_save(net, dir.join(file))?;
        }
        if let (Mixer::QmixMono(m), Some(file)) = (&self.mixer, &manifest.hypernet) {
            checkpoint_save(&m.hypernet, dir.join(file))?;
        }
        let text = toml::to_string(&manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<JointPolicy> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: PolicyManifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if m.format != FORMAT {
            return Err(Error::CorruptCheckpoint(format!("unknown policy format {:?}", m.format)));
        }
        if m.version != VERSION {
            return Err(Error::VersionMismatch {
                found: m.version,
                expected: VERSION,
            });
        }
        if m.actions != ACTION_COUNT || m.agent_nets.len() != m.agents {
            return Err(Error::ShapeMismatch("manifest action/agent counts inconsistent".into()));
        }
        let nets = m
            .agent_nets
            .iter()
            .map(|f| checkpoint_load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let mixer = match m.mixer {
            MixerKind::Vdn => Mixer::Vdn,
            MixerKind::QmixMono => {
                let (Some(file), Some(embed)) = (&m.hypernet, m.mixer_embed) else {
                    return Err(Error::ShapeMismatch("qmix manifest lacks hypernet/embed".into()));
                };
                Mixer::QmixMono(QmixMixer::new(checkpoint_load(dir.join(file))?, m.agents, embed)?)
            }
        };
        let policy = JointPolicy::new(nets, mixer, m.global_state_len)?;
        if policy.observation_len() != m.observation_len {
            return Err(Error::ShapeMismatch(format!(
                "manifest says observation_len {}, nets take {}",
                m.observation_len,
                policy.observation_len()
            )));
        }
        Ok(policy)
    }
}
