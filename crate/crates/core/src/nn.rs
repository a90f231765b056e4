//! Dense feed-forward networks with reverse-mode gradients and Adam.
//!
//! Everything here is sized for small generator/discriminator heads: a
//! handful of fully connected layers, batches of a few hundred rows, 64-bit
//! arithmetic throughout. Batches are row-major (`batch × features`).
//!
//! The JSON layout of a serialized [`Mlp`] is
//! `{"layers": [{"weight": <output_dim × input_dim>, "bias": <output_dim>,
//! "activation": ...}, ...]}` with layers in evaluation order.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Probability clamp applied before taking logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("network needs at least one layer")]
    NoLayers,
    #[error("layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },
    #[error("layer {index} expects {expected} inputs but the previous layer produces {found}")]
    DimensionChain {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slope")]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if pre >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }

    fn validate(&self, index: usize) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::InvalidLayer {
                index,
                reason: "dimensions must be at least 1".into(),
            });
        }
        if let Activation::LeakyRelu(slope) = self.activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(NnError::InvalidLayer {
                    index,
                    reason: format!("leaky slope {slope} outside (0, 1)"),
                });
            }
        }
        Ok(())
    }
}

/// Leaky hidden layers of the given widths followed by one output layer.
pub fn stack(input_dim: usize, hidden: &[usize], output_dim: usize, output: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &width in hidden {
        specs.push(LayerSpec::new(prev, width, Activation::leaky()));
        prev = width;
    }
    specs.push(LayerSpec::new(prev, output_dim, output));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `output_dim × input_dim`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Deserialize)]
struct RawMlp {
    layers: Vec<Dense>,
}

impl TryFrom<RawMlp> for Mlp {
    type Error = NnError;

    fn try_from(raw: RawMlp) -> Result<Self, Self::Error> {
        Mlp::from_layers(raw.layers)
    }
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Gradients (or any per-parameter quantity) shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Flattened view in the same order as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len())
    }
}

impl Mlp {
    /// Random network with zero biases and He-style `N(0, 2/fan_in)` weights.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        check_chain(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| {
                let std = (2.0 / spec.input_dim as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let weight = Array2::from_shape_fn((spec.output_dim, spec.input_dim), |_| normal.sample(&mut rng));
                Dense {
                    weight,
                    bias: Array1::zeros(spec.output_dim),
                    activation: spec.activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        let specs: Vec<LayerSpec> = layers
            .iter()
            .map(|l| LayerSpec::new(l.input_dim(), l.output_dim(), l.activation))
            .collect();
        check_chain(&specs)?;
        for (index, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(NnError::InvalidLayer {
                    index,
                    reason: "bias length differs from output_dim".into(),
                });
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(NnError::NonFinite("layer parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Inverse of [`Mlp::parameters`].
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.parameter_count() {
            return Err(NnError::Length(values.len(), self.parameter_count()));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = batch.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            let act = layer.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = out;
        }
        Ok((current, ForwardCache { inputs, pre }))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(batch)?;
        let mut current = batch.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
            current = z;
        }
        Ok(current)
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>), NnError> {
        if cache.pre.len() != self.layers.len() {
            return Err(NnError::Length(cache.pre.len(), self.layers.len()));
        }
        let last = &cache.pre[cache.pre.len() - 1];
        if output_gradient.dim() != last.dim() {
            return Err(NnError::Shape {
                expected: last.dim(),
                found: output_gradient.dim(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_gradient.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            Zip::from(&mut upstream)
                .and(&cache.pre[i])
                .for_each(|g, &z| *g *= act.derivative(z));
            let weight = upstream.t().dot(&cache.inputs[i]);
            let bias = upstream.sum_axis(Axis(0));
            let next = upstream.dot(&layer.weight);
            grads.push(LayerGrad { weight, bias });
            upstream = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<(), NnError> {
        if batch.ncols() != self.input_dim() {
            return Err(NnError::Shape {
                expected: (batch.nrows(), self.input_dim()),
                found: batch.dim(),
            });
        }
        if !batch.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("network input"));
        }
        Ok(())
    }
}

fn check_chain(specs: &[LayerSpec]) -> Result<(), NnError> {
    if specs.is_empty() {
        return Err(NnError::NoLayers);
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate(i)?;
        if i > 0 && specs[i - 1].output_dim != spec.input_dim {
            return Err(NnError::DimensionChain {
                index: i,
                expected: spec.input_dim,
                found: specs[i - 1].output_dim,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Gradients,
    second_moment: Gradients,
    step_count: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of `net`. Non-finite gradients are
    /// rejected and leave both the network and the state untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if !grads.matches(net) || !self.first_moment.matches(net) {
            return Err(NnError::Length(grads.layers.len(), net.layers.len()));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradients"));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment.layers)
            .zip(&mut self.second_moment.layers)
        {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy and its gradient with respect to the predictions.
///
/// Predictions are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log; the
/// gradient is taken on the clamped value.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if predictions.is_empty() {
        return Err(NnError::Empty("bce_loss"));
    }
    if predictions.len() != labels.len() {
        return Err(NnError::Length(predictions.len(), labels.len()));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        if !p.is_finite() {
            return Err(NnError::NonFinite("bce predictions"));
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((-y / p + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Mean squared error over all entries and its gradient.
pub fn mse_loss(predicted: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>), NnError> {
    if predicted.dim() != target.dim() {
        return Err(NnError::Shape {
            expected: target.dim(),
            found: predicted.dim(),
        });
    }
    if predicted.is_empty() {
        return Err(NnError::Empty("mse_loss"));
    }
    let count = predicted.len() as f64;
    let diff = &predicted - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff.mapv(|d| 2.0 * d / count)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn single(weight: f64, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Dense {
            weight: array![[weight]],
            bias: array![0.0],
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let specs = stack(16, &[64, 32, 16], 4, Activation::Linear);
        let a = Mlp::init(&specs, 42).unwrap();
        let shapes: Vec<_> = a.layers().iter().map(|l| l.weight.dim()).collect();
        assert_eq!(shapes, vec![(64, 16), (32, 64), (16, 32), (4, 16)]);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let b = Mlp::init(&specs, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Mlp::init(&specs, 43).unwrap());
    }

    #[test]
    fn init_rejects_bad_specs() {
        assert_eq!(Mlp::init(&[], 1), Err(NnError::NoLayers));
        let bad = [LayerSpec::new(2, 3, Activation::Linear), LayerSpec::new(4, 1, Activation::Linear)];
        assert!(matches!(Mlp::init(&bad, 1), Err(NnError::DimensionChain { index: 1, .. })));
        let slope = [LayerSpec::new(2, 3, Activation::LeakyRelu(1.5))];
        assert!(matches!(Mlp::init(&slope, 1), Err(NnError::InvalidLayer { .. })));
    }

    #[test]
    fn forward_identity_and_activations() {
        let net = Mlp::from_layers(vec![Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = array![[1.0, -2.0, 3.5]];
        assert_eq!(net.predict(x.view()).unwrap(), x);

        let leaky = single(1.0, Activation::leaky());
        assert_relative_eq!(leaky.predict(array![[-1.0]].view()).unwrap()[[0, 0]], -0.2);
        let sig = single(1.0, Activation::Sigmoid);
        assert_eq!(sig.predict(array![[0.0]].view()).unwrap()[[0, 0]], 0.5);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = single(1.0, Activation::Linear);
        assert!(matches!(net.forward(array![[1.0, 2.0]].view()), Err(NnError::Shape { .. })));
        assert_eq!(net.forward(array![[f64::NAN]].view()).unwrap_err(), NnError::NonFinite("network input"));
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = Mlp::from_layers(vec![Dense {
            weight: array![[0.3, -0.7]],
            bias: array![0.0],
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = array![[2.0, 5.0]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, gin) = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weight, x);
        assert_eq!(gin, array![[0.3, -0.7]]);
    }

    #[test]
    fn leaky_local_slope() {
        assert_eq!(Activation::leaky().derivative(-1.0), 0.2);
        assert_eq!(Activation::leaky().derivative(1.0), 1.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let specs = stack(3, &[5, 4], 2, Activation::Sigmoid);
        let net = Mlp::init(&specs, 7).unwrap();
        let x = array![[0.3, -0.8, 1.1], [-0.4, 0.9, 0.2]];
        let weights = array![[0.7, -1.3], [0.2, 0.5]];
        let loss = |n: &Mlp| (n.predict(x.view()).unwrap() * &weights).sum();
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, weights.view()).unwrap();
        let analytic = g.flatten();
        let base = net.parameters();
        let h = 1e-5;
        for (i, a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            let mut probe = net.clone();
            p[i] = base[i] + h;
            probe.set_parameters(&p).unwrap();
            let up = loss(&probe);
            p[i] = base[i] - h;
            probe.set_parameters(&p).unwrap();
            let down = loss(&probe);
            let fd = (up - down) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-6, "param {i}: analytic {a} fd {fd}");
        }
    }

    #[test]
    fn backward_rejects_wrong_gradient_shape() {
        let net = single(1.0, Activation::Linear);
        let (_, cache) = net.forward(array![[1.0], [2.0]].view()).unwrap();
        assert!(net.backward(&cache, array![[1.0]].view()).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut net = single(1.0, Activation::Linear);
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].weight[[0, 0]] = 0.1;
        state.step(&mut net, &g).unwrap();
        // m_hat = 0.1, v_hat = 0.01 → delta = -1e-4 * 0.1 / (0.1 + 1e-8)
        let expected = 1.0 - 1e-4 * 0.1 / (0.1 + 1e-8);
        assert_relative_eq!(net.layers()[0].weight[[0, 0]], expected, epsilon = 1e-15);
        assert_eq!(net.layers()[0].bias[0], 0.0);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = single(1.0, Activation::Linear);
        let before = net.clone();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].bias[0] = f64::INFINITY;
        assert!(state.step(&mut net, &g).is_err());
        assert_eq!(net, before);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn adam_descends_quadratic() {
        // θ² via a bias-only linear layer with zero weight.
        let mut net = Mlp::from_layers(vec![Dense {
            weight: array![[0.0]],
            bias: array![1.0],
            activation: Activation::Linear,
        }])
        .unwrap();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let theta = net.layers()[0].bias[0];
            let loss = theta * theta;
            assert!(loss < last);
            last = loss;
            let mut g = Gradients::zeros_like(&net);
            g.layers[0].bias[0] = 2.0 * theta;
            state.step(&mut net, &g).unwrap();
        }
    }

    #[test]
    fn bce_values() {
        let (l, _) = bce_loss(&[0.5; 4], &[1.0; 4]).unwrap();
        assert_relative_eq!(l, std::f64::consts::LN_2, epsilon = 1e-15);
        let (real, _) = bce_loss(&[0.5; 3], &[1.0; 3]).unwrap();
        let (fake, _) = bce_loss(&[0.5; 3], &[0.0; 3]).unwrap();
        assert_relative_eq!(real + fake, 4f64.ln(), epsilon = 1e-12);
        let (near, _) = bce_loss(&[1.0 - BCE_EPS], &[1.0]).unwrap();
        assert_relative_eq!(near, BCE_EPS, max_relative = 1e-6);
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mse_values_and_gradient() {
        let (l, _) = mse_loss(array![[1.0, 2.0]].view(), array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(l, 2.5);
        let (z, _) = mse_loss(array![[1.0, 2.0]].view(), array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(z, 0.0);
        assert!(mse_loss(array![[1.0]].view(), array![[1.0, 2.0]].view()).is_err());

        let p = array![[0.4, -1.2], [2.5, 0.1]];
        let t = array![[0.0, 1.0], [2.0, -0.5]];
        let (_, g) = mse_loss(p.view(), t.view()).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut up = p.clone();
            up[idx] += h;
            let mut down = p.clone();
            down[idx] -= h;
            let fd = (mse_loss(up.view(), t.view()).unwrap().0 - mse_loss(down.view(), t.view()).unwrap().0) / (2.0 * h);
            assert!((fd - g[idx]).abs() / g[idx].abs() < 1e-8);
        }
    }

    #[test]
    fn serde_roundtrip_validates() {
        let net = Mlp::init(&stack(1, &[64, 32], 1, Activation::Sigmoid), 3).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn batch_consistent(seed in 0u64..1000, rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 1..6)) {
                let net = Mlp::init(&stack(4, &[8, 6], 3, Activation::Sigmoid), seed).unwrap();
                let batch = Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i][j]);
                let out = net.predict(batch.view()).unwrap();
                for (i, row) in rows.iter().enumerate() {
                    let single = Array2::from_shape_vec((1, 4), row.clone()).unwrap();
                    let o = net.predict(single.view()).unwrap();
                    for j in 0..3 {
                        prop_assert!((o[[0, j]] - out[[i, j]]).abs() <= 1e-14 * (1.0 + o[[0, j]].abs()));
                    }
                }
            }
        }
    }
}
