//! Fully-connected networks with a shared ReLU trunk and two linear heads.
//!
//! ```text
//! input ──▶ trunk (ReLU, ReLU, …) ──▶ F ──┬─▶ hash head (linear)  ──▶ H   (K wide)
//!                                         └─▶ class head (linear) ──▶ L̂  (C wide)
//! ```
//!
//! The heads read the same trunk output `F` but own disjoint parameters, so
//! gradients from the classification loss never reach the hash head and vice
//! versa. All parameters live in one flat `Vec<f64>`; [`LayerShape`] records the
//! offsets of each layer's weight matrix (row-major, `outputs x inputs`) and bias.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Layer widths of a two-headed network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    /// Hidden trunk widths; the last one is the semantic feature width. May be empty,
    /// in which case the heads read the input directly.
    pub trunk: Vec<usize>,
    pub hash_bits: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        self.trunk.last().copied().unwrap_or(self.input)
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hash_bits == 0 || self.classes == 0 || self.trunk.contains(&0) {
            return Err(Error::Config(format!("all layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    arch: Architecture,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Activations retained by a forward pass, batch-major (one row per input).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub input: Matrix,
    /// Post-activation output of each trunk layer.
    pub trunk: Vec<Matrix>,
    pub hash: Matrix,
    pub class: Matrix,
}

impl ForwardRecord {
    /// Semantic features: the last trunk activation (or the input for an empty trunk).
    pub fn features(&self) -> &Matrix {
        self.trunk.last().unwrap_or(&self.input)
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Fingerprint of which ReLU units are active; changes when any unit crosses zero.
    pub fn relu_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for m in &self.trunk {
            for &v in m.as_slice() {
                (v > 0.0).hash(&mut h);
            }
        }
        h.finish()
    }
}

fn layout(arch: &Architecture) -> Vec<LayerShape> {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, inputs: usize, outputs: usize, activation: Activation| {
        let shape = LayerShape {
            name,
            inputs,
            outputs,
            activation,
            weight_offset: offset,
            bias_offset: offset + inputs * outputs,
        };
        offset += shape.param_count();
        layers.push(shape);
    };
    let mut width = arch.input;
    for (i, &w) in arch.trunk.iter().enumerate() {
        push(format!("trunk{i}"), width, w, Activation::Relu);
        width = w;
    }
    push("hash".into(), width, arch.hash_bits, Activation::Identity);
    push("class".into(), width, arch.classes, Activation::Identity);
    layers
}

impl MlpNetwork {
    /// Network with Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`) and zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &net.layers {
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut net.params[l.weight_offset..l.bias_offset] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = layout(&arch);
        let n = layers.iter().map(LayerShape::param_count).sum();
        Ok(Self { arch, layers, params: vec![0.0; n] })
    }

    /// Rebuilds a network from a flat parameter vector in layout order.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        check_len(net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerShape> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Human-readable name of a flat parameter index, e.g. `hash.weight[3,0]`.
    pub fn param_name(&self, index: usize) -> String {
        for l in &self.layers {
            if index >= l.weight_offset && index < l.bias_offset {
                let k = index - l.weight_offset;
                return format!("{}.weight[{},{}]", l.name, k / l.inputs, k % l.inputs);
            }
            if index >= l.bias_offset && index < l.bias_offset + l.outputs {
                return format!("{}.bias[{}]", l.name, index - l.bias_offset);
            }
        }
        format!("param[{index}]")
    }

    fn weights(&self, l: &LayerShape) -> &[f64] {
        &self.params[l.weight_offset..l.bias_offset]
    }

    fn bias(&self, l: &LayerShape) -> &[f64] {
        &self.params[l.bias_offset..l.bias_offset + l.outputs]
    }

    fn affine(&self, l: &LayerShape, x: &Matrix) -> Matrix {
        let (w, b) = (self.weights(l), self.bias(l));
        let mut out = Matrix::zeros(x.rows(), l.outputs);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, slot) in out.row_mut(r).iter_mut().enumerate() {
                let z = dot(&w[o * l.inputs..(o + 1) * l.inputs], xr) + b[o];
                *slot = match l.activation {
                    Activation::Relu => z.max(0.0),
                    Activation::Identity => z,
                };
            }
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord> {
        self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec())?)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<ForwardRecord> {
        check_len(self.arch.input, x.cols())?;
        let n_trunk = self.arch.trunk.len();
        let mut trunk: Vec<Matrix> = Vec::with_capacity(n_trunk);
        for l in &self.layers[..n_trunk] {
            let next = self.affine(l, trunk.last().unwrap_or(x));
            trunk.push(next);
        }
        let f = trunk.last().unwrap_or(x);
        let hash = self.affine(&self.layers[n_trunk], f);
        let class = self.affine(&self.layers[n_trunk + 1], f);
        Ok(ForwardRecord { input: x.clone(), trunk, hash, class })
    }

    /// Hash-head outputs only, for encoding.
    pub fn hash_outputs(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_batch(x)?.hash)
    }

    /// Reverse-mode gradient of a scalar loss with respect to every parameter,
    /// given the loss gradients with respect to the three outputs of `record`.
    pub fn backward(
        &self,
        record: &ForwardRecord,
        d_features: &Matrix,
        d_hash: &Matrix,
        d_class: &Matrix,
    ) -> Result<Vec<f64>> {
        let n = record.batch_size();
        let fdim = self.arch.feature_dim();
        for (m, cols) in [(d_features, fdim), (d_hash, self.arch.hash_bits), (d_class, self.arch.classes)] {
            check_len(n, m.rows())?;
            check_len(cols, m.cols())?;
        }
        let mut grads = vec![0.0; self.params.len()];
        let n_trunk = self.arch.trunk.len();
        let f = record.features();

        let mut upstream = d_features.clone();
        for (l, d_out) in [(&self.layers[n_trunk], d_hash), (&self.layers[n_trunk + 1], d_class)] {
            self.accumulate_layer(l, f, d_out, &mut grads, Some(&mut upstream));
        }
        for k in (0..n_trunk).rev() {
            let l = &self.layers[k];
            let out = &record.trunk[k];
            // ReLU: pass gradient only where the unit was active.
            for (g, &a) in upstream.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = if k == 0 { &record.input } else { &record.trunk[k - 1] };
            if k == 0 {
                self.accumulate_layer(l, input, &upstream, &mut grads, None);
            } else {
                let mut below = Matrix::zeros(n, l.inputs);
                self.accumulate_layer(l, input, &upstream, &mut grads, Some(&mut below));
                upstream = below;
            }
        }
        Ok(grads)
    }

    /// Adds this layer's weight/bias gradients and, if asked, `d_out · W` into `d_input`.
    fn accumulate_layer(
        &self,
        l: &LayerShape,
        input: &Matrix,
        d_out: &Matrix,
        grads: &mut [f64],
        mut d_input: Option<&mut Matrix>,
    ) {
        let w = self.weights(l);
        for r in 0..input.rows() {
            let x = input.row(r);
            for (o, &g) in d_out.row(r).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let gw = &mut grads[l.weight_offset + o * l.inputs..l.weight_offset + (o + 1) * l.inputs];
                for (acc, xi) in gw.iter_mut().zip(x) {
                    *acc += g * xi;
                }
                grads[l.bias_offset + o] += g;
                if let Some(di) = d_input.as_deref_mut() {
                    for (acc, wi) in di.row_mut(r).iter_mut().zip(&w[o * l.inputs..(o + 1) * l.inputs]) {
                        *acc += g * wi;
                    }
                }
            }
        }
    }
}

/// Parameter update rule driven by a flat gradient.
pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grads: &[f64]);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state sized for a different network");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Classical momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, num_params: usize) -> Self {
        Self { lr, momentum, velocity: vec![0.0; num_params] }
    }
}

impl Optimizer for SgdMomentum {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.velocity.len(), "optimizer state sized for a different network");
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}
