//! Multiple-testing corrections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability in [0, 1] used as a test p-value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PValue(f64);

impl PValue {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(PValue(value))
        } else {
            Err(Error::domain(format!("p-value {value} outside [0, 1]")))
        }
    }

    /// Caps a non-negative score (e.g. a weighted p-value) at one.
    pub fn capped(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::domain(format!("cannot cap {value} into a p-value")));
        }
        Ok(PValue(value.min(1.0)))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PValue {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        PValue::new(value)
    }
}

impl From<PValue> for f64 {
    fn from(p: PValue) -> f64 {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BhOutcome {
    pub reject: Vec<bool>,
    /// Largest k with p_(k) <= k·alpha/H, or 0 when no test passes.
    pub cutoff_index: usize,
}

/// Benjamini-Hochberg step-up procedure.
pub fn bh_procedure(pvalues: &[PValue], alpha: f64) -> BhOutcome {
    let h = pvalues.len();
    let mut sorted: Vec<f64> = pvalues.iter().map(|p| p.get()).collect();
    sorted.sort_by(f64::total_cmp);

    let cutoff_index = (1..=h)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * alpha / h as f64)
        .unwrap_or(0);
    let reject = if cutoff_index == 0 {
        vec![false; h]
    } else {
        let threshold = sorted[cutoff_index - 1];
        pvalues.iter().map(|p| p.get() <= threshold).collect()
    };
    BhOutcome {
        reject,
        cutoff_index,
    }
}

/// Bonferroni rejections at level alpha / H.
pub fn bonferroni(pvalues: &[PValue], alpha: f64) -> Vec<bool> {
    let h = pvalues.len() as f64;
    pvalues.iter().map(|p| p.get() <= alpha / h).collect()
}
