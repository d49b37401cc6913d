//! A small fully connected network with hand-written reverse mode.
//!
//! Each layer computes `sigma(W rho + beta)`. The output layer uses a scaled
//! sigmoid so every output lands in `[0, theta_i]`; that is how the power and
//! bandwidth caps are enforced without penalty terms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `theta_i * sigmoid(z_i)`.
    ScaledSigmoid { theta: Vec<f64> },
    /// Identity; handy for checking gradients of the affine part alone.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn relu(width: usize) -> Self {
        Self { width, activation: Activation::Relu }
    }

    pub fn linear(width: usize) -> Self {
        Self { width, activation: Activation::Linear }
    }

    pub fn scaled_sigmoid(theta: Vec<f64>) -> Self {
        Self { width: theta.len(), activation: Activation::ScaledSigmoid { theta } }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidConfig("layer width must be at least 1".into()));
        }
        if let Activation::ScaledSigmoid { theta } = &self.activation {
            if theta.len() != self.width {
                return Err(Error::DimensionMismatch { what: "sigmoid scale vector", expected: self.width, got: theta.len() });
            }
            if theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::InvalidConfig("sigmoid scales must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Hidden widths 100-100-50-25 with ReLU, then `2 n_s` scaled sigmoids:
/// the first `n_s` capped at `p_max`, the rest at `b_max`.
pub fn paper_architecture(n_s: usize, p_max: f64, b_max: f64) -> Vec<LayerSpec> {
    let mut theta = vec![p_max; n_s];
    theta.extend(std::iter::repeat(b_max).take(n_s));
    vec![
        LayerSpec::relu(100),
        LayerSpec::relu(100),
        LayerSpec::relu(50),
        LayerSpec::relu(25),
        LayerSpec::scaled_sigmoid(theta),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Unit-variance Gaussian weights, zero biases.
    PaperGaussian,
    /// Gaussian with variance `2 / fan_in`, zero biases.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub spec: LayerSpec,
    /// Row-major, `spec.width x fan_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-coordinate affine map applied to inputs: `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        Self { shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn uniform_scale(dim: usize, scale: f64) -> Self {
        Self { shift: vec![0.0; dim], scale: vec![scale; dim] }
    }

    /// Mean and standard deviation of each coordinate over `batch`. A
    /// coordinate with (near) zero spread keeps scale `floor`.
    pub fn standardize(batch: &[Vec<f64>], floor: f64) -> Result<Self> {
        let dim = batch.first().map_or(0, |x| x.len());
        if dim == 0 || batch.iter().any(|x| x.len() != dim) {
            return Err(Error::InvalidConfig("standardization needs a non-empty rectangular batch".into()));
        }
        let n = batch.len() as f64;
        let shift: Vec<f64> = (0..dim).map(|j| batch.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|j| {
                let var = batch.iter().map(|x| (x[j] - shift[j]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(floor)
            })
            .collect();
        Ok(Self { shift, scale })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_dim: usize,
    pub input_norm: InputNorm,
    pub seed: u64,
    pub init: InitScheme,
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    /// Output-layer pre-activations.
    pub fn output_logits(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient with the same shape as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|x| *x *= c);
    }

    /// Entry at the flat index used by [`Network::param`].
    pub fn get(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.bias) {
            if idx < w.len() {
                return w[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("gradient index out of range");
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.bias).flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).flatten().all(|x| x.is_finite())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Network {
    pub fn init(arch: &[LayerSpec], input_dim: usize, seed: u64, scheme: InitScheme) -> Result<Self> {
        if input_dim == 0 || arch.is_empty() {
            return Err(Error::InvalidConfig("network needs inputs and at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(arch.len());
        for spec in arch {
            spec.validate()?;
            let std = match scheme {
                InitScheme::PaperGaussian => 1.0,
                InitScheme::Scaled => (2.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let weights = (0..spec.width * fan_in).map(|_| normal.sample(&mut rng)).collect();
            layers.push(Layer { fan_in, spec: spec.clone(), weights, bias: vec![0.0; spec.width] });
            fan_in = spec.width;
        }
        Ok(Self { input_dim, input_norm: InputNorm::identity(input_dim), seed, init: scheme, layers })
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Self {
        self.input_norm = norm;
        self
    }

    pub fn with_input_scale(self, scale: f64) -> Self {
        let dim = self.input_dim;
        self.with_input_norm(InputNorm::uniform_scale(dim, scale))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.width)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Checks that layer shapes chain and scales are sane.
    pub fn validate(&self) -> Result<()> {
        let mut fan_in = self.input_dim;
        for l in &self.layers {
            l.spec.validate()?;
            if l.fan_in != fan_in {
                return Err(Error::DimensionMismatch { what: "layer fan-in", expected: fan_in, got: l.fan_in });
            }
            if l.weights.len() != l.spec.width * fan_in {
                return Err(Error::DimensionMismatch { what: "weight matrix", expected: l.spec.width * fan_in, got: l.weights.len() });
            }
            if l.bias.len() != l.spec.width {
                return Err(Error::DimensionMismatch { what: "bias", expected: l.spec.width, got: l.bias.len() });
            }
            fan_in = l.spec.width;
        }
        let norm = &self.input_norm;
        if norm.shift.len() != self.input_dim || norm.scale.len() != self.input_dim {
            return Err(Error::DimensionMismatch { what: "input normalization", expected: self.input_dim, got: norm.scale.len() });
        }
        if norm.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || norm.shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("input scales must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { what: "network input", expected: self.input_dim, got: x.len() });
        }
        let norm = &self.input_norm;
        let mut act: Vec<f64> = x.iter().zip(&norm.shift).zip(&norm.scale).map(|((v, m), s)| (v - m) / s).collect();
        let mut tape = Tape { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::with_capacity(self.layers.len()) };
        for layer in &self.layers {
            let z: Vec<f64> = layer
                .weights
                .chunks_exact(layer.fan_in)
                .zip(&layer.bias)
                .map(|(row, b)| row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + b)
                .collect();
            let out = match &layer.spec.activation {
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::ScaledSigmoid { theta } => z.iter().zip(theta).map(|(v, t)| t * sigmoid(*v)).collect(),
                Activation::Linear => z.clone(),
            };
            tape.inputs.push(std::mem::replace(&mut act, out));
            tape.pre.push(z);
        }
        Ok((act, tape))
    }

    /// Vector-Jacobian product: the gradient of `dl_dy . y` with respect to
    /// every weight and bias.
    pub fn backward(&self, tape: &Tape, dl_dy: &[f64]) -> Result<Gradients> {
        if tape.pre.len() != self.layers.len() {
            return Err(Error::DimensionMismatch { what: "tape depth", expected: self.layers.len(), got: tape.pre.len() });
        }
        if dl_dy.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { what: "output gradient", expected: self.output_dim(), got: dl_dy.len() });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = dl_dy.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre[li];
            let delta: Vec<f64> = match &layer.spec.activation {
                Activation::Relu => upstream.iter().zip(z).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect(),
                Activation::ScaledSigmoid { theta } => upstream
                    .iter()
                    .zip(z)
                    .zip(theta)
                    .map(|((g, v), t)| {
                        let s = sigmoid(*v);
                        g * t * s * (1.0 - s)
                    })
                    .collect(),
                Activation::Linear => upstream.clone(),
            };
            let input = &tape.inputs[li];
            let gw = &mut grads.weights[li];
            for (row, d) in gw.chunks_exact_mut(layer.fan_in).zip(&delta) {
                row.iter_mut().zip(input).for_each(|(g, a)| *g = d * a);
            }
            grads.bias[li].copy_from_slice(&delta);
            if li > 0 {
                let mut next = vec![0.0; layer.fan_in];
                for (row, d) in layer.weights.chunks_exact(layer.fan_in).zip(&delta) {
                    next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
                }
                upstream = next;
            }
        }
        Ok(grads)
    }

    /// `theta <- theta - step * grad`.
    pub fn apply_step(&mut self, grads: &Gradients, step: f64) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= step * g);
            layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= step * g);
        }
    }

    /// Parameter at a flat index (layer by layer, weights then bias).
    pub fn param(&self, idx: usize) -> f64 {
        *self.locate(idx)
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        *self.locate_mut(idx) = value;
    }

    fn locate(&self, mut idx: usize) -> &f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return &l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return &l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn locate_mut(&mut self, mut idx: usize) -> &mut f64 {
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

    /// Fraction of output units whose logit magnitude exceeds `threshold`
    /// over the given inputs; near 1 means the output layer is saturated.
    pub fn output_saturation(&self, inputs: &[Vec<f64>], threshold: f64) -> Result<f64> {
        let mut saturated = 0usize;
        let mut total = 0usize;
        for x in inputs {
            let (_, tape) = self.forward(x)?;
            let logits = tape.output_logits();
            saturated += logits.iter().filter(|z| z.abs() > threshold || !z.is_finite()).count();
            total += logits.len();
        }
        Ok(if total == 0 { 0.0 } else { saturated as f64 / total as f64 })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize, activation: Activation) -> Network {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Network {
            input_dim: n,
            input_norm: InputNorm::identity(n),
            seed: 0,
            init: InitScheme::Scaled,
            layers: vec![Layer { fan_in: n, spec: LayerSpec { width: n, activation }, weights, bias: vec![0.0; n] }],
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let net = identity_layer(1, Activation::ScaledSigmoid { theta: vec![1.0] });
        assert_eq!(net.forward(&[0.0]).unwrap().0, vec![0.5]);
    }

    #[test]
    fn relu_identity() {
        let net = identity_layer(2, Activation::Relu);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap().0, vec![0.0, 2.0]);
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-40.0) > 0.0);
    }

    #[test]
    fn linear_layer_gradient() {
        let mut net = identity_layer(3, Activation::Linear);
        net.layers[0].weights = (0..9).map(|i| i as f64 * 0.1).collect();
        let x = [0.3, -1.2, 2.0];
        let (_, tape) = net.forward(&x).unwrap();
        let g = net.backward(&tape, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(&g.weights[0][0..3], &x);
        assert!(g.weights[0][3..].iter().all(|v| *v == 0.0));
        assert_eq!(g.bias[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_seed_zero_grad() {
        let net = Network::init(&[LayerSpec::relu(4), LayerSpec::scaled_sigmoid(vec![1.0, 2.0])], 3, 5, InitScheme::Scaled).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = net.backward(&tape, &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let arch = paper_architecture(15, 2.6e-5, 5e9);
        let a = Network::init(&arch, 15, 9, InitScheme::PaperGaussian).unwrap();
        let b = Network::init(&arch, 15, 9, InitScheme::PaperGaussian).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
        assert_eq!(a.output_dim(), 30);
        assert_eq!(a.param_count(), 15 * 100 + 100 + 100 * 100 + 100 + 100 * 50 + 50 + 50 * 25 + 25 + 25 * 30 + 30);
    }

    #[test]
    fn dimension_checks() {
        let net = Network::init(&[LayerSpec::relu(2)], 3, 0, InitScheme::Scaled).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        let (_, tape) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&tape, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(Network::init(&[LayerSpec::scaled_sigmoid(vec![1.0, -1.0])], 3, 0, InitScheme::Scaled).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = Network::init(&[LayerSpec::relu(3), LayerSpec::scaled_sigmoid(vec![1.0, 2.0])], 2, 4, InitScheme::Scaled)
            .unwrap()
            .with_input_scale(35.0);
        let text = net.to_json().unwrap();
        assert!(text.contains("\"scaled_sigmoid\""));
        assert_eq!(Network::from_json(&text).unwrap(), net);
        let mut broken = net.clone();
        broken.layers[1].fan_in = 7;
        assert!(Network::from_json(&broken.to_json().unwrap()).is_err());
    }

    #[test]
    fn flat_param_indexing() {
        let mut net = Network::init(&[LayerSpec::relu(2), LayerSpec::linear(1)], 2, 1, InitScheme::Scaled).unwrap();
        assert_eq!(net.param_count(), 4 + 2 + 2 + 1);
        net.set_param(4, 3.5);
        assert_eq!(net.layers[0].bias[0], 3.5);
        net.set_param(8, -1.0);
        assert_eq!(net.layers[1].bias[0], -1.0);
    }
}
