use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activated value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer; `weights` is row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)
        }));
    }
}

/// Dense feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
}

/// Per-layer activations recorded by [`Mlp::forward_trace`]; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Reusable buffers for allocation-free inference.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Flat view in checkpoint order: per layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl Mlp {
    fn check_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "layer_dims must list at least two positive sizes, got {layer_dims:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let layers = layer_dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            activation,
            layers,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Builds a network from explicit layers, validating the shape chain.
    pub fn from_layers(activation: Activation, layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network needs at least one layer".into()));
        }
        let mut dims = vec![layers[0].inputs];
        for layer in &layers {
            if layer.inputs != *dims.last().unwrap()
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.biases.len() != layer.outputs
            {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}x{} does not chain after dims {dims:?}",
                    layer.inputs, layer.outputs
                )));
            }
            dims.push(layer.outputs);
        }
        Self::check_dims(&dims)?;
        let net = Mlp {
            layer_dims: dims,
            activation,
            layers,
        };
        if !net.params().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, weights row-major then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Scratch::default();
        Ok(self.forward_into(input, &mut scratch)?.to_vec())
    }

    /// Forward pass reusing `scratch`; the returned slice borrows it.
    pub fn forward_into<'s>(&self, input: &[f64], scratch: &'s mut Scratch) -> Result<&'s [f64]> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let Scratch { a, b } = scratch;
        self.layers[0].affine_into(input, a);
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                layer.affine_into(a, b);
                std::mem::swap(a, b);
            }
            if i != last {
                a.iter_mut().for_each(|z| *z = self.activation.apply(*z));
            }
        }
        Ok(&scratch.a)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine_into(activations.last().unwrap(), &mut out);
            if i != last {
                out.iter_mut().for_each(|z| *z = self.activation.apply(*z));
            }
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Reverse-mode gradients of `output_grad · f(input)` with respect to the
    /// parameters and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        self.backward_trace(&trace, output_grad)
    }

    pub fn backward_trace(&self, trace: &Trace, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len() + 1,
                got: trace.activations.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let last = self.layers.len() - 1;
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if l != last {
                for (d, &a) in delta.iter_mut().zip(&trace.activations[l + 1]) {
                    *d *= self.activation.derivative_from_output(a);
                }
            }
            let x = &trace.activations[l];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grads.weights[l][o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g = d * xi;
                }
            }
            grads.biases[l].copy_from_slice(&delta);
            let mut upstream = vec![0.0; layer.inputs];
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                for (u, &w) in upstream.iter_mut().zip(row) {
                    *u += w * d;
                }
            }
            delta = upstream;
        }
        Ok((grads, delta))
    }
}

/// Index of the largest value; ties go to the lowest index.
#[inline]
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
