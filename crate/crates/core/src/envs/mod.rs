//! Deterministic cooperative gridworlds with snapshotable state.
//!
//! `step` is a pure function of `(spec, state, action)`, so a search can
//! branch from any stored state.

mod sim;
mod spec;

pub use sim::{
    episode_reward, observation_len, observe, reset, step, Action, Controller, EnvState,
    JointAction, StepOutcome, ACTION_COUNT, CHANNELS,
};
pub use spec::{Cell, GridSpec, ItemKind, RewardTable};
