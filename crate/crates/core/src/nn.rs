//! Minimal dense networks with hand-written backpropagation and an Adam optimizer.
//!
//! Weights are stored row-major as `outputs × inputs`. ReLU uses subgradient 0
//! at the kink.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform fan-in initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self { inputs, outputs, weights, bias: vec![0.0; outputs], activation }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs && self.bias.len() == self.outputs
    }
}

/// Intermediate values of one forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims` lists layer widths from input to output; `activations` has one entry per layer.
    pub fn init<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| Dense::init(d[0], d[1], a, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| Dense::zeros(d[0], d[1], a))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Checks that consecutive layers chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !l.is_consistent() {
                return Err(Error::Schema(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::Shape { expected: self.layers[i - 1].outputs, actual: l.inputs });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("layer {i} contains non-finite parameters")));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), actual: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.pre_activation(&h).into_iter().map(|v| l.activation.apply(v)).collect();
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&h);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok(Trace { inputs, pre, output: h })
    }

    /// Accumulates parameter gradients given dLoss/dOutput for one traced pass.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut Gradients) {
        let mut delta = grad_output.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[li];
            let input = &trace.inputs[li];
            for (d, &z) in delta.iter_mut().zip(pre) {
                *d *= l.activation.derivative(z);
            }
            let g = &mut grads.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                for (gw, &v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; l.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                delta = next;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return &mut l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= k);
            l.bias.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Adam with bias correction. Frozen layers are skipped entirely.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, frozen: &[bool]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            if frozen.get(li).copied().unwrap_or(false) {
                continue;
            }
            let g = &grads.layers[li];
            let m = &mut self.m.layers[li];
            let v = &mut self.v.layers[li];
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
