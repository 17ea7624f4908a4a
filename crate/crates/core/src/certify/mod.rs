//! Per-state certification with importance-corrected FDR selection, and the
//! tree search that bounds the team reward under the smallest certified
//! perturbation.

mod crsc;
mod grid;
mod importance;
mod search;

use serde::{Deserialize, Serialize};

use crate::smoothing::NoiseConfig;

pub use crsc::{crsc, crsc_from_tally, get_node, node_from_tally, CrscResult, NodeInfo, StateCertificate};
pub use grid::{certify_trajectory, tcrgr, GridProblem, RewardCertificate};
pub use importance::{
    importance_factor, importance_from_values, normalize_importance, ImportanceFactors, IF_FLOOR,
};
pub use search::{tree_search, SearchOptions, SearchOutcome, SearchProblem, Transition};

/// What a certificate was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: String,
    /// Policy fingerprint.
    pub policy: String,
    pub noise: NoiseConfig,
}
