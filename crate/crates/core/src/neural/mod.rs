//! Minimal feed-forward network engine.
//!
//! The network follows a fixed shape: the first layer is affine with no
//! activation, hidden layers apply the activation, and the output layer is
//! affine. Three computations are supported exactly:
//!
//! * forward evaluation,
//! * directional input derivatives via tangent (forward-mode) propagation,
//! * gradients of batch losses with respect to all parameters, including
//!   losses that read the input derivatives (reverse accumulation over the
//!   combined forward + tangent computation).

mod adam;
mod grad;

pub use adam::{adam_step, AdamState};
pub use grad::{backprop_point, loss_gradient, loss_gradient_with_tangent, Gradient};

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Relu => u.max(0.0),
        }
    }

    /// First derivative; the relu subgradient at 0 is 0.
    #[inline]
    fn d1(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Second derivative (zero almost everywhere for relu).
    #[inline]
    fn d2(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Relu => 0.0,
        }
    }
}

/// Weights and biases of the feed-forward network. `weights[l]` is stored
/// row-major with shape layer_sizes[l+1] x layer_sizes[l].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

impl NetworkParams {
    /// Xavier-uniform initialization, seeded.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Shape(format!(
                "bad layer sizes {layer_sizes:?}; need at least input and output"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(NetworkParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Whether layer l (0-based weight index) applies the activation: the
    /// first and last layers are affine, everything between is activated.
    #[inline]
    fn activated(&self, l: usize) -> bool {
        l > 0 && l < self.n_layers() - 1
    }

    /// Plain forward evaluation.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_inputs() {
            return Err(Error::Shape(format!(
                "input length {} vs expected {}",
                input.len(),
                self.n_inputs()
            )));
        }
        let mut x = input.to_vec();
        for l in 0..self.n_layers() {
            let mut u = self.affine(l, &x);
            if self.activated(l) {
                for v in u.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            x = u;
        }
        Ok(x)
    }

    /// Forward pass retaining pre-activations for tangent/reverse passes.
    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.n_inputs() {
            return Err(Error::Shape(format!(
                "input length {} vs expected {}",
                input.len(),
                self.n_inputs()
            )));
        }
        let mut xs = Vec::with_capacity(self.n_layers() + 1);
        let mut us = Vec::with_capacity(self.n_layers());
        xs.push(input.to_vec());
        for l in 0..self.n_layers() {
            let u = self.affine(l, xs.last().unwrap());
            let x = if self.activated(l) {
                u.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                u.clone()
            };
            us.push(u);
            xs.push(x);
        }
        Ok(ForwardTrace { xs, us })
    }

    /// Tangent (directional derivative) pass along the given input direction.
    pub fn tangent_trace(&self, trace: &ForwardTrace, direction: &[f64]) -> TangentTrace {
        let mut ts = Vec::with_capacity(self.n_layers() + 1);
        let mut ss = Vec::with_capacity(self.n_layers());
        ts.push(direction.to_vec());
        for l in 0..self.n_layers() {
            let s = self.linear(l, ts.last().unwrap());
            let t = if self.activated(l) {
                trace.us[l]
                    .iter()
                    .zip(s.iter())
                    .map(|(&u, &sv)| self.activation.d1(u) * sv)
                    .collect()
            } else {
                s.clone()
            };
            ss.push(s);
            ts.push(t);
        }
        TangentTrace { ts, ss }
    }

    /// Exact derivative of every output with respect to input `which`.
    pub fn input_derivative(&self, input: &[f64], which: usize) -> Result<Vec<f64>> {
        if which >= self.n_inputs() {
            return Err(Error::Shape(format!(
                "input index {which} out of range for {} inputs",
                self.n_inputs()
            )));
        }
        let trace = self.forward_trace(input)?;
        let mut dir = vec![0.0; self.n_inputs()];
        dir[which] = 1.0;
        let tan = self.tangent_trace(&trace, &dir);
        Ok(tan.ts.last().unwrap().clone())
    }

    /// W_l x + b_l.
    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.weights[l];
        let b = &self.biases[l];
        let mut out = b.clone();
        for row in 0..n_out {
            let mut acc = 0.0;
            let base = row * n_in;
            for col in 0..n_in {
                acc += w[base + col] * x[col];
            }
            out[row] += acc;
        }
        out
    }

    /// W_l x (no bias), used by the tangent pass.
    fn linear(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.weights[l];
        let mut out = vec![0.0; n_out];
        for row in 0..n_out {
            let mut acc = 0.0;
            let base = row * n_in;
            for col in 0..n_in {
                acc += w[base + col] * x[col];
            }
            out[row] = acc;
        }
        out
    }
}

/// Saved activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// xs[0] = input, xs[l+1] = layer l output.
    pub xs: Vec<Vec<f64>>,
    /// us[l] = layer l pre-activation.
    pub us: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.xs.last().unwrap()
    }
}

/// Saved tangents of one directional-derivative pass.
#[derive(Debug, Clone)]
pub struct TangentTrace {
    /// ts[0] = direction, ts[l+1] = tangent of layer l output.
    pub ts: Vec<Vec<f64>>,
    /// ss[l] = tangent of layer l pre-activation.
    pub ss: Vec<Vec<f64>>,
}

impl TangentTrace {
    pub fn output(&self) -> &[f64] {
        self.ts.last().unwrap()
    }
}

/// Checkpoint schema shared by every trained network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub net: NetworkParams,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Input standardization: per input dimension, (offset, scale) mapping
    /// raw -> scaled = (raw - offset) * scale.
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_json(path: &Path) -> Result<Checkpoint> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&body)?)
    }
}
