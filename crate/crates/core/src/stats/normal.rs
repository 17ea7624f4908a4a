//! Standard normal and chi-square distribution functions.

use libm::erfc;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Φ(x), the standard normal CDF.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("normal cdf of non-finite input {x}")));
    }
    Ok(cdf_unchecked(x))
}

#[inline]
fn cdf_unchecked(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Φ⁻¹(p) for p in the open unit interval.
///
/// Acklam's rational approximation seeds two Halley refinements against the
/// erfc-based CDF, which brings |Φ(x) − p| to the level of double rounding.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    let mut x = acklam(p);
    for _ in 0..2 {
        let e = cdf_unchecked(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Unrefined Acklam approximation (relative error ≈ 1e-9). Used where many
/// draws are needed and exact tails do not matter, e.g. noise generation.
#[inline]
pub(crate) fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Quantile of the chi-square distribution with `df` degrees of freedom,
/// found by bisection on the regularized lower incomplete gamma function.
pub fn chi2_quantile(df: u32, p: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::domain("chi-square quantile needs df >= 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("chi-square quantile needs 0 < p < 1, got {p}")));
    }
    let shape = f64::from(df) / 2.0;
    let cdf = |q: f64| gamma_lr(shape, q / 2.0);

    let mut lo = 0.0_f64;
    let mut hi = f64::from(df).max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
