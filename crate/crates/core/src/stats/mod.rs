//! Statistical primitives: normal and chi-square quantiles, exact binomial
//! tests and bounds, Goodman multinomial intervals, and BH selection.
//!
//! Every function here is pure.

mod binomial;
mod fdr;
mod multinomial;
mod normal;

pub use binomial::{binom_lower_bound, binom_pvalue_one_sided, binom_pvalue_two_sided};
pub use fdr::{bh_procedure, bonferroni, BhOutcome, PValue};
pub use multinomial::{goodman_a, goodman_bounds, goodman_interval, ConfidenceBox};
pub(crate) use normal::acklam;
pub use normal::{chi2_quantile, std_normal_cdf, std_normal_quantile};
