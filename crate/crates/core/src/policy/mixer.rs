//! Monotone QMIX-style mixing conditioned on a global state encoding.

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp};

/// Hypernetwork-driven monotone mixer.
///
/// The hypernetwork maps the global state to `[W1 (agents×embed, agent-major)
/// | b1 (embed) | w2 (embed) | b2]`. Mixing is
/// `Q = Σₑ |w2ₑ|·elu(Σₙ |W1ₙₑ|·qₙ + b1ₑ) + b2`, so ∂Q/∂qₙ ≥ 0 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixMixer {
    pub hypernet: Mlp,
    pub n_agents: usize,
    pub embed: usize,
}

#[inline]
fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl QmixMixer {
    pub fn hyper_output_len(n_agents: usize, embed: usize) -> usize {
        n_agents * embed + 2 * embed + 1
    }

    pub fn new(hypernet: Mlp, n_agents: usize, embed: usize) -> Result<Self> {
        let want = Self::hyper_output_len(n_agents, embed);
        if hypernet.output_dim() != want {
            return Err(Error::ShapeMismatch(format!(
                "hypernet emits {} values, mixer needs {want}",
                hypernet.output_dim()
            )));
        }
        Ok(QmixMixer {
            hypernet,
            n_agents,
            embed,
        })
    }

    fn check(&self, chosen: &[f64]) -> Result<()> {
        if chosen.len() != self.n_agents {
            return Err(Error::DimensionMismatch {
                expected: self.n_agents,
                got: chosen.len(),
            });
        }
        Ok(())
    }

    fn pre_activations(&self, h: &[f64], chosen: &[f64]) -> Vec<f64> {
        let e = self.embed;
        let b1 = &h[self.n_agents * e..self.n_agents * e + e];
        (0..e)
            .map(|k| {
                b1[k]
                    + chosen
                        .iter()
                        .enumerate()
                        .map(|(n, q)| h[n * e + k].abs() * q)
                        .sum::<f64>()
            })
            .collect()
    }

    fn head(&self, h: &[f64], z: &[f64]) -> f64 {
        let e = self.embed;
        let off = self.n_agents * e + e;
        let w2 = &h[off..off + e];
        let b2 = h[off + e];
        w2.iter().zip(z).map(|(w, &zk)| w.abs() * elu(zk)).sum::<f64>() + b2
    }

    pub fn mix(&self, chosen: &[f64], global: &[f64]) -> Result<f64> {
        self.check(chosen)?;
        let h = self.hypernet.forward(global)?;
        let z = self.pre_activations(&h, chosen);
        Ok(self.head(&h, &z))
    }

    /// Gradients of `upstream · Q` with respect to the hypernet parameters
    /// and the per-agent chosen values.
    pub fn mix_backward(
        &self,
        chosen: &[f64],
        global: &[f64],
        upstream: f64,
    ) -> Result<(Gradients, Vec<f64>)> {
        self.check(chosen)?;
        let trace = self.hypernet.forward_trace(global)?;
        let h = trace.output();
        let e = self.embed;
        let n = self.n_agents;
        let z = self.pre_activations(h, chosen);
        let off = n * e + e;

        let mut dh = vec![0.0; h.len()];
        let mut dq = vec![0.0; n];
        dh[off + e] = upstream;
        for k in 0..e {
            let w2 = h[off + k];
            dh[off + k] = upstream * sign(w2) * elu(z[k]);
            let dz = upstream * w2.abs() * elu_grad(z[k]);
            dh[n * e + k] = dz;
            for (a, &q) in chosen.iter().enumerate() {
                let w1 = h[a * e + k];
                dh[a * e + k] = dz * sign(w1) * q;
                dq[a] += dz * w1.abs();
            }
        }
        let (grads, _) = self.hypernet.backward_trace(&trace, &dh)?;
        Ok((grads, dq))
    }
}
