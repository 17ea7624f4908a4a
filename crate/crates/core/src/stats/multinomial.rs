//! Goodman simultaneous confidence intervals for multinomial proportions.

use serde::{Deserialize, Serialize};

use super::normal::chi2_quantile;
use crate::error::{Error, Result};

/// Per-category simultaneous bounds on the true multinomial probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// The Goodman A parameter: χ²₁ quantile at 1 − alpha / categories.
pub fn goodman_a(categories: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(categories >= 2.0) {
        return Err(Error::domain("Goodman bounds need at least two categories"));
    }
    chi2_quantile(1, 1.0 - alpha / categories)
}

/// Bounds for a single category with count `n` out of `total`, given A.
pub fn goodman_interval(n: u64, total: u64, a: f64) -> (f64, f64) {
    let m = total as f64;
    let n = n as f64;
    let centre = a + 2.0 * n;
    let radical = (a * (a + 4.0 * n * (m - n) / m)).sqrt();
    let denom = 2.0 * (m + a);
    (
        ((centre - radical) / denom).clamp(0.0, 1.0),
        ((centre + radical) / denom).clamp(0.0, 1.0),
    )
}

pub fn goodman_bounds(counts: &[u64], alpha: f64) -> Result<ConfidenceBox> {
    if counts.len() < 2 {
        return Err(Error::domain("Goodman bounds need at least two categories"));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::domain("Goodman bounds need a positive sample size"));
    }
    let a = goodman_a(counts.len() as f64, alpha)?;
    let (lower, upper) = counts
        .iter()
        .map(|&n| goodman_interval(n, total, a))
        .unzip();
    Ok(ConfidenceBox { lower, upper })
}
