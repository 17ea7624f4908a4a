//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashMap;

use marlcert_core::certify::{NodeInfo, SearchProblem, Transition};
use marlcert_core::nn::{Activation, Mlp};
use marlcert_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Φ(x) from the Maclaurin series of erf (|x| ≤ 3) or the Lentz continued
/// fraction of erfc (|x| > 3).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    if z.abs() <= 3.0 / std::f64::consts::SQRT_2 {
        // erf(z) = 2/√π Σ (-1)^n z^(2n+1) / (n! (2n+1))
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -z * z / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() || n > 400.0 {
                break;
            }
        }
        0.5 + sum / std::f64::consts::PI.sqrt()
    } else {
        let a = z.abs();
        // erfc(a) = exp(-a²)/√π · 1/(a + 1/2/(a + 1/(a + 3/2/(a + ...))))
        let mut f = a;
        let tiny = 1e-300;
        let mut c = f;
        let mut d = 0.0;
        for k in 1..500 {
            let coef = k as f64 / 2.0;
            d = a + coef * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = a + coef / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let erfc = (-a * a).exp() / std::f64::consts::PI.sqrt() / f;
        if z > 0.0 { 1.0 - 0.5 * erfc } else { 0.5 * erfc }
    }
}

pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing, root in [lo, hi]
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn normal_quantile(p: f64) -> f64 {
    bisect(-40.0, 40.0, |x| normal_cdf(x) - p)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos g=7, n=9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(s, x) by its power series.
pub fn gamma_p(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / s;
    let mut sum = term;
    let mut k = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        k += 1.0;
        term *= x / (s + k);
        sum += term;
        if k > 1e5 {
            break;
        }
    }
    (s * x.ln() - x - ln_gamma(s) + sum.ln()).exp()
}

pub fn chi2_quantile(df: u32, p: f64) -> f64 {
    bisect(0.0, 500.0, |q| gamma_p(df as f64 / 2.0, q / 2.0) - p)
}

/// ln C(m, k) as an explicit sum of logarithms.
pub fn ln_choose(m: u64, k: u64) -> f64 {
    let k = k.min(m - k);
    (0..k).map(|i| ((m - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

pub fn binom_pmf(k: u64, m: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == m { 1.0 } else { 0.0 };
    }
    (ln_choose(m, k) + k as f64 * p.ln() + (m - k) as f64 * (1.0 - p).ln()).exp()
}

/// P(X ≥ k) by summing every pmf term.
pub fn upper_tail(k: u64, m: u64, p: f64) -> f64 {
    (k..=m).map(|i| binom_pmf(i, m, p)).sum::<f64>().min(1.0)
}

pub fn lower_tail(k: u64, m: u64, p: f64) -> f64 {
    (0..=k).map(|i| binom_pmf(i, m, p)).sum::<f64>().min(1.0)
}

pub fn cp_lower(k: u64, m: u64, alpha: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    bisect(0.0, 1.0, |p| upper_tail(k, m, p) - alpha)
}

/// Textbook BH: try every k from H down to 1.
pub fn bh_naive(p: &[f64], alpha: f64) -> Vec<bool> {
    let h = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    for k in (1..=h).rev() {
        if sorted[k - 1] <= k as f64 * alpha / h as f64 {
            let cut = sorted[k - 1];
            return p.iter().map(|&x| x <= cut).collect();
        }
    }
    vec![false; h]
}

pub fn random_net(dims: &[usize], activation: Activation, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::random(dims, activation, &mut rng).unwrap();
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    net
}

/// Small deterministic search problem: states are (depth, tag), action sets,
/// radii and rewards are pseudo-random functions of the state.
#[derive(Clone)]
pub struct Toy {
    pub agents: usize,
    pub actions: usize,
    pub depth: usize,
    pub tags: u64,
    pub seed: u64,
}

fn h(parts: &[u64]) -> u64 {
    let mut z = 0x2545_f491_4f6c_dd1du64;
    for &p in parts {
        z ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(z << 6).wrapping_add(z >> 2);
        z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z ^= z >> 29;
    }
    z
}

impl Toy {
    pub fn node(&self, state: &(usize, u64)) -> NodeInfo {
        let mut sets = Vec::new();
        let mut radii = Vec::new();
        for n in 0..self.agents {
            let r = h(&[self.seed, state.0 as u64, state.1, n as u64]);
            let modal = (r % self.actions as u64) as usize;
            let mut set = vec![modal];
            if (r >> 8) % 3 == 0 && self.actions > 1 {
                set.push((modal + 1 + ((r >> 16) as usize % (self.actions - 1))) % self.actions);
            }
            sets.push(set);
            radii.push(((r >> 24) % 1000) as f64 / 1000.0);
        }
        let radius = radii.iter().copied().fold(f64::INFINITY, f64::min);
        NodeInfo { action_sets: sets, agent_radius: radii, radius }
    }

    pub fn step(&self, state: &(usize, u64), action: &[usize]) -> Transition<(usize, u64)> {
        let mut parts = vec![self.seed, 77, state.0 as u64, state.1];
        parts.extend(action.iter().map(|&a| a as u64));
        let r = h(&parts);
        Transition {
            state: (state.0 + 1, r % self.tags),
            reward: ((r >> 10) % 3) as f64,
            done: state.0 + 1 >= self.depth,
        }
    }

    /// Every root-to-leaf path: R_min and the smallest radius among
    /// non-terminal nodes whose accumulated reward is ≤ R_min.
    pub fn enumerate(&self) -> (f64, f64) {
        let mut nodes: Vec<(f64, f64)> = Vec::new();
        let mut leaves: Vec<f64> = Vec::new();
        let mut stack = vec![((0usize, 0u64), 0.0)];
        while let Some((s, r)) = stack.pop() {
            let info = self.node(&s);
            nodes.push((r, info.radius));
            let mut combos: Vec<Vec<usize>> = vec![vec![]];
            for set in &info.action_sets {
                combos = combos
                    .into_iter()
                    .flat_map(|c| set.iter().map(move |&a| [c.clone(), vec![a]].concat()))
                    .collect();
            }
            for a in combos {
                let t = self.step(&s, &a);
                if t.done {
                    leaves.push(r + t.reward);
                } else {
                    stack.push((t.state, r + t.reward));
                }
            }
        }
        let r_min = leaves.iter().copied().fold(f64::INFINITY, f64::min);
        let eps = nodes
            .iter()
            .filter(|(r, _)| *r <= r_min)
            .map(|&(_, d)| d)
            .fold(f64::INFINITY, f64::min);
        (r_min, eps)
    }
}

impl SearchProblem for Toy {
    type State = (usize, u64);

    fn root(&self) -> Result<(usize, u64)> {
        Ok((0, 0))
    }

    fn expand(&self, state: &(usize, u64)) -> Result<NodeInfo> {
        Ok(self.node(state))
    }

    fn transition(&self, state: &(usize, u64), action: &[usize]) -> Result<Transition<(usize, u64)>> {
        Ok(self.step(state, action))
    }

    fn rewards_non_negative(&self) -> bool {
        true
    }
}

/// Counts expansions per state to check each state is expanded once.
pub struct Counting<'a> {
    pub inner: &'a Toy,
    pub calls: std::cell::RefCell<HashMap<(usize, u64), usize>>,
}

impl SearchProblem for Counting<'_> {
    type State = (usize, u64);

    fn root(&self) -> Result<(usize, u64)> {
        Ok((0, 0))
    }

    fn expand(&self, state: &(usize, u64)) -> Result<NodeInfo> {
        *self.calls.borrow_mut().entry(*state).or_insert(0) += 1;
        Ok(self.inner.node(state))
    }

    fn transition(&self, state: &(usize, u64), action: &[usize]) -> Result<Transition<(usize, u64)>> {
        Ok(self.inner.step(state, action))
    }

    fn rewards_non_negative(&self) -> bool {
        true
    }
}
