//! Value-based cooperative policies: per-agent Q networks, VDN and monotone
//! QMIX mixers, greedy decentralized execution, and a TD trainer.

mod checkpoint;
mod joint;
mod mixer;
mod train;

pub use checkpoint::{PolicyManifest, MANIFEST};
pub use joint::{global_state, global_state_len, JointPolicy, Mixer, MixerKind};
pub use mixer::QmixMixer;
pub use train::{train, TrainConfig, TrainReport};
