//! Minimal feedforward network kernel.
//!
//! Fixed stacks of dense layers with a nonlinear activation on hidden layers
//! and a linear output layer. Parameters, exact reverse-mode gradients,
//! SGD/Adam updates and a finite-difference gradient check — nothing more.
//! All math is `f64`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NnError {
    #[error("network spec needs at least two layer widths, got {0}")]
    TooFewLayers(usize),
    #[error("layer width must be >= 1, found 0 at position {0}")]
    ZeroWidth(usize),
    #[error("input length {got} does not match network input width {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("upstream gradient length {got} does not match output width {expected}")]
    UpstreamShape { expected: usize, got: usize },
    #[error("gradient shape does not match parameters at layer {layer}")]
    GradShape { layer: usize },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
}

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed in terms of the activation output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of a feedforward stack: layer widths from input to output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self, NnError> {
        let spec = NetworkSpec {
            layer_widths,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `[input, hidden..., output]` from separate pieces.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
    ) -> Result<Self, NnError> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths, activation)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_widths.len() < 2 {
            return Err(NnError::TooFewLayers(self.layer_widths.len()));
        }
        if let Some(pos) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(NnError::ZeroWidth(pos));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One dense layer: `weights` is `out x in` row-major, `biases` is `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    fn init_random(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        // Zero-mean normal scaled by 1/sqrt(fan_in); zero biases.
        let scale = 1.0 / libm::sqrt(fan_in as f64);
        let weights = (0..fan_in * fan_out)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        LayerParams {
            weights,
            biases: vec![0.0; fan_out],
        }
    }
}

/// All layer parameters of a network plus the seed they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub seed: u64,
}

impl NetworkParams {
    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }
}

/// A spec together with matching parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    params: NetworkParams,
}

/// Per-layer buffers recorded during a forward pass, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// `layer_inputs[l]` is the input to layer `l` (the raw input for l=0,
    /// otherwise the post-activation of layer l-1).
    layer_inputs: Vec<Vec<f64>>,
    /// `preacts[l]` is `W x + b` at layer `l`; the last entry is the output.
    preacts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.preacts.last().expect("trace before forward pass")
    }
}

/// Gradient (or moment) buffer shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .spec
            .layer_widths
            .windows(2)
            .map(|w| LayerParams::zeros(w[0], w[1]))
            .collect();
        Gradients { layers }
    }

    pub fn zero(&mut self) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|v| *v = 0.0);
            layer.biases.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|v| *v *= factor);
            layer.biases.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Network {
    /// Deterministic initialization: weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(spec: NetworkSpec, seed: u64) -> Network {
        debug_assert!(spec.validate().is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| LayerParams::init_random(w[0], w[1], &mut rng))
            .collect();
        Network {
            spec,
            params: NetworkParams { layers, seed },
        }
    }

    pub fn from_parts(spec: NetworkSpec, params: NetworkParams) -> Network {
        debug_assert_eq!(spec.num_layers(), params.layers.len());
        Network { spec, params }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    /// Re-draw one layer's weights from a fresh seed (biases back to zero).
    /// Used to give ensemble members their own scalar-head initialization.
    pub fn reinit_layer(&mut self, layer: usize, seed: u64) {
        let fan_in = self.spec.layer_widths[layer];
        let fan_out = self.spec.layer_widths[layer + 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.layers[layer] = LayerParams::init_random(fan_in, fan_out, &mut rng);
    }

    /// Forward pass recording per-layer buffers into `trace`.
    pub fn forward_trace(&self, input: &[f64], trace: &mut ForwardTrace) -> Result<(), NnError> {
        if input.len() != self.spec.input_width() {
            return Err(NnError::InputShape {
                expected: self.spec.input_width(),
                got: input.len(),
            });
        }
        let n_layers = self.spec.num_layers();
        trace.layer_inputs.resize(n_layers, Vec::new());
        trace.preacts.resize(n_layers, Vec::new());

        trace.layer_inputs[0].clear();
        trace.layer_inputs[0].extend_from_slice(input);

        for l in 0..n_layers {
            let fan_in = self.spec.layer_widths[l];
            let fan_out = self.spec.layer_widths[l + 1];
            let layer = &self.params.layers[l];

            // Split borrows: the input of layer l is read while its preact
            // and the next layer input are written.
            let x = core::mem::take(&mut trace.layer_inputs[l]);
            let pre = &mut trace.preacts[l];
            pre.clear();
            for i in 0..fan_out {
                let row = &layer.weights[i * fan_in..(i + 1) * fan_in];
                let dot: f64 = row.iter().zip(x.iter()).map(|(w, v)| w * v).sum();
                pre.push(layer.biases[i] + dot);
            }
            trace.layer_inputs[l] = x;

            if l + 1 < n_layers {
                let act = self.spec.activation;
                let pre = trace.preacts[l].clone();
                let next = &mut trace.layer_inputs[l + 1];
                next.clear();
                next.extend(pre.iter().map(|&p| act.apply(p)));
            }
        }
        Ok(())
    }

    /// Forward pass returning a fresh output vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut trace = ForwardTrace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.output().to_vec())
    }

    /// Forward pass for scalar-output networks.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64, NnError> {
        debug_assert_eq!(self.spec.output_width(), 1);
        Ok(self.forward(input)?[0])
    }

    /// Exact reverse-mode gradient of `upstream . output` with respect to all
    /// parameters (accumulated into `grads`) and the input (returned).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        if upstream.len() != self.spec.output_width() {
            return Err(NnError::UpstreamShape {
                expected: self.spec.output_width(),
                got: upstream.len(),
            });
        }
        let n_layers = self.spec.num_layers();
        let mut delta: Vec<f64> = upstream.to_vec();

        for l in (0..n_layers).rev() {
            let fan_in = self.spec.layer_widths[l];
            let fan_out = self.spec.layer_widths[l + 1];
            if grads.layers[l].weights.len() != fan_in * fan_out
                || grads.layers[l].biases.len() != fan_out
            {
                return Err(NnError::GradShape { layer: l });
            }
            let x = &trace.layer_inputs[l];
            {
                let glayer = &mut grads.layers[l];
                for i in 0..fan_out {
                    let d = delta[i];
                    glayer.biases[i] += d;
                    let grow = &mut glayer.weights[i * fan_in..(i + 1) * fan_in];
                    for (g, v) in grow.iter_mut().zip(x.iter()) {
                        *g += d * v;
                    }
                }
            }

            // Propagate to the previous layer: W^T delta, then through the
            // activation (except at the raw input).
            let mut prev = vec![0.0; fan_in];
            let layer = &self.params.layers[l];
            for i in 0..fan_out {
                let d = delta[i];
                let row = &layer.weights[i * fan_in..(i + 1) * fan_in];
                for (p, w) in prev.iter_mut().zip(row.iter()) {
                    *p += d * w;
                }
            }
            if l > 0 {
                let act = self.spec.activation;
                let y = &trace.layer_inputs[l];
                for (p, &yi) in prev.iter_mut().zip(y.iter()) {
                    *p *= act.grad_from_output(yi);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

/// `act(x + d) - act(x)` without catastrophic cancellation for small `d`.
fn activation_diff(act: Activation, x: f64, d: f64) -> f64 {
    match act {
        // tanh(a) - tanh(b) = sinh(a - b) / (cosh(a) cosh(b))
        Activation::Tanh => libm::sinh(d) / (libm::cosh(x + d) * libm::cosh(x)),
        Activation::Relu => {
            let hi = if x + d > 0.0 { x + d } else { 0.0 };
            let lo = if x > 0.0 { x } else { 0.0 };
            hi - lo
        }
    }
}

/// Central difference of `sum(output)` for one parameter entry, computed by
/// propagating the branch difference separately so it never cancels against
/// the function value.
fn central_diff_entry(
    net: &Network,
    base: &ForwardTrace,
    layer: usize,
    idx: usize,
    epsilon: f64,
) -> f64 {
    let spec = &net.spec;
    let n_layers = spec.num_layers();
    let fan_in = spec.layer_widths[layer];
    let fan_out = spec.layer_widths[layer + 1];
    let n_w = fan_in * fan_out;

    // Seed the difference at the perturbed layer: only one preact row moves,
    // and it moves by exactly 2 * epsilon * input (or 2 * epsilon for a bias).
    let (row, bump) = if idx < n_w {
        (idx / fan_in, 2.0 * epsilon * base.layer_inputs[layer][idx % fan_in])
    } else {
        (idx - n_w, 2.0 * epsilon)
    };

    let mut d_pre = vec![0.0; fan_out];
    d_pre[row] = bump;

    for l in layer..n_layers {
        if l + 1 == n_layers {
            break;
        }
        // Through the activation, then the next linear layer.
        let act = spec.activation;
        let pre = &base.preacts[l];
        let d_y: Vec<f64> = pre
            .iter()
            .zip(d_pre.iter())
            .map(|(&x, &d)| {
                if d == 0.0 {
                    0.0
                } else {
                    activation_diff(act, x - d / 2.0, d)
                }
            })
            .collect();

        let next_in = spec.layer_widths[l + 1];
        let next_out = spec.layer_widths[l + 2];
        let w = &net.params.layers[l + 1].weights;
        let mut next = vec![0.0; next_out];
        for (i, out) in next.iter_mut().enumerate() {
            let rw = &w[i * next_in..(i + 1) * next_in];
            *out = rw.iter().zip(d_y.iter()).map(|(a, b)| a * b).sum();
        }
        d_pre = next;
    }

    let d_f: f64 = d_pre.iter().sum();
    d_f / (2.0 * epsilon)
}

fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + fd.abs() + 1e-12)
}

/// Max relative error between analytic and central-finite-difference
/// gradients of `sum(output)` over every parameter entry.
pub fn grad_check(net: &Network, input: &[f64], epsilon: f64) -> Result<f64, NnError> {
    grad_check_sampled(net, input, epsilon, usize::MAX, 0)
}

/// As [`grad_check`] but verifying at most `max_entries` per layer, chosen by
/// a seeded draw. Lets big architectures stay inside a time budget.
pub fn grad_check_sampled(
    net: &Network,
    input: &[f64],
    epsilon: f64,
    max_entries: usize,
    sample_seed: u64,
) -> Result<f64, NnError> {
    use rand::seq::IteratorRandom;
    debug_assert!(epsilon > 0.0 && epsilon <= 1e-2);
    let mut base = ForwardTrace::default();
    net.forward_trace(input, &mut base)?;
    let mut analytic = Gradients::zeros_like(net);
    let upstream = vec![1.0; net.spec.output_width()];
    net.backward(&base, &upstream, &mut analytic)?;

    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut max_err: f64 = 0.0;
    for l in 0..net.spec.num_layers() {
        let n_w = net.params.layers[l].weights.len();
        let n_b = net.params.layers[l].biases.len();
        let total = n_w + n_b;
        let indices: Vec<usize> = if total <= max_entries {
            (0..total).collect()
        } else {
            let mut picked = (0..total).choose_multiple(&mut rng, max_entries);
            picked.sort_unstable();
            picked
        };
        for idx in indices {
            let fd = central_diff_entry(net, &base, l, idx, epsilon);
            let a = if idx < n_w {
                analytic.layers[l].weights[idx]
            } else {
                analytic.layers[l].biases[idx - n_w]
            };
            max_err = max_err.max(relative_error(a, fd));
        }
    }
    Ok(max_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD or bias-corrected Adam over a network's parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    moments: Option<(Gradients, Gradients)>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Optimizer {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: None,
        }
    }

    pub fn adam(learning_rate: f64) -> Optimizer {
        Optimizer {
            kind: OptimizerKind::Adam,
            learning_rate,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: None,
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Optimizer {
        match kind {
            OptimizerKind::Sgd => Self::sgd(learning_rate),
            OptimizerKind::Adam => Self::adam(learning_rate),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update. Rejects non-finite gradients, naming the layer.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<(), NnError> {
        for (l, (g, p)) in grads.layers.iter().zip(net.params.layers.iter()).enumerate() {
            if g.weights.len() != p.weights.len() || g.biases.len() != p.biases.len() {
                return Err(NnError::GradShape { layer: l });
            }
            if !g.weights.iter().chain(g.biases.iter()).all(|v| v.is_finite()) {
                return Err(NnError::NonFiniteGradient { layer: l });
            }
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.learning_rate;
                for (p, g) in net.params.layers.iter_mut().zip(grads.layers.iter()) {
                    for (pv, gv) in p.weights.iter_mut().zip(g.weights.iter()) {
                        *pv -= lr * gv;
                    }
                    for (pv, gv) in p.biases.iter_mut().zip(g.biases.iter()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.moments.is_none() {
                    let zeros = Gradients {
                        layers: grads
                            .layers
                            .iter()
                            .map(|l| LayerParams {
                                weights: vec![0.0; l.weights.len()],
                                biases: vec![0.0; l.biases.len()],
                            })
                            .collect(),
                    };
                    self.moments = Some((zeros.clone(), zeros));
                }
                let (m, v) = self.moments.as_mut().unwrap();
                let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
                let t = self.step_count as i32;
                let corr1 = 1.0 - libm::pow(b1, f64::from(t));
                let corr2 = 1.0 - libm::pow(b2, f64::from(t));
                for ((p, g), (ml, vl)) in net
                    .params
                    .layers
                    .iter_mut()
                    .zip(grads.layers.iter())
                    .zip(m.layers.iter_mut().zip(v.layers.iter_mut()))
                {
                    let update = |pv: &mut f64, gv: f64, mv: &mut f64, vv: &mut f64| {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let m_hat = *mv / corr1;
                        let v_hat = *vv / corr2;
                        *pv -= lr * m_hat / (libm::sqrt(v_hat) + eps);
                    };
                    for ((pv, &gv), (mv, vv)) in p
                        .weights
                        .iter_mut()
                        .zip(g.weights.iter())
                        .zip(ml.weights.iter_mut().zip(vl.weights.iter_mut()))
                    {
                        update(pv, gv, mv, vv);
                    }
                    for ((pv, &gv), (mv, vv)) in p
                        .biases
                        .iter_mut()
                        .zip(g.biases.iter())
                        .zip(ml.biases.iter_mut().zip(vl.biases.iter_mut()))
                    {
                        update(pv, gv, mv, vv);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize]) -> NetworkSpec {
        NetworkSpec::new(widths.to_vec(), Activation::Tanh).unwrap()
    }

    #[test]
    fn spec_invariants() {
        assert!(matches!(
            NetworkSpec::new(vec![4], Activation::Tanh),
            Err(NnError::TooFewLayers(1))
        ));
        assert!(matches!(
            NetworkSpec::new(vec![4, 0, 1], Activation::Tanh),
            Err(NnError::ZeroWidth(1))
        ));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Network::init(spec(&[4, 8, 1]), 7);
        let b = Network::init(spec(&[4, 8, 1]), 7);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn init_biases_are_zero() {
        let net = Network::init(spec(&[2, 1]), 123);
        assert!(net.params().layers[0].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_seeds_differ() {
        let a = Network::init(spec(&[4, 8, 1]), 1);
        let b = Network::init(spec(&[4, 8, 1]), 2);
        assert_ne!(a.params(), b.params());
    }

    #[test]
    fn forward_zero_params_gives_zero() {
        let mut net = Network::init(spec(&[3, 4, 2]), 0);
        for layer in &mut net.params_mut().layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = net.forward(&[0.3, -1.0, 2.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_single_linear_layer_dot_product() {
        let mut net = Network::init(spec(&[2, 1]), 0);
        net.params_mut().layers[0].weights = vec![1.0, 2.0];
        net.params_mut().layers[0].biases = vec![0.0];
        assert_eq!(net.forward_scalar(&[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn forward_tanh_zero_input_zero_bias() {
        let net = Network::init(spec(&[3, 5, 1]), 42);
        // Biases start at zero, so tanh(0) = 0 propagates through.
        assert_eq!(net.forward_scalar(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_pure() {
        let net = Network::init(spec(&[4, 8, 3]), 9);
        let x = [0.1, -0.2, 0.3, 0.7];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn forward_rejects_bad_shape() {
        let net = Network::init(spec(&[4, 1]), 0);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::InputShape { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let net = Network::init(spec(&[3, 4, 2]), 5);
        let mut trace = ForwardTrace::default();
        net.forward_trace(&[1.0, 2.0, 3.0], &mut trace).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&trace, &[0.0, 0.0], &mut grads).unwrap();
        for layer in &grads.layers {
            assert!(layer.weights.iter().all(|&g| g == 0.0));
            assert!(layer.biases.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_linear_weight_grad_is_input() {
        let mut net = Network::init(spec(&[3, 1]), 0);
        net.params_mut().layers[0].weights = vec![0.5, -0.25, 2.0];
        let x = [1.5, -2.0, 0.25];
        let mut trace = ForwardTrace::default();
        net.forward_trace(&x, &mut trace).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        let input_grad = net.backward(&trace, &[1.0], &mut grads).unwrap();
        assert_eq!(grads.layers[0].weights, x.to_vec());
        assert_eq!(grads.layers[0].biases, vec![1.0]);
        assert_eq!(input_grad, vec![0.5, -0.25, 2.0]);
    }

    #[test]
    fn grad_check_linear_is_tight() {
        let net = Network::init(spec(&[4, 1]), 3);
        let err = grad_check(&net, &[0.3, -0.7, 1.1, 0.05], 1e-5).unwrap();
        assert!(err <= 1e-8, "err = {err:e}");
    }

    #[test]
    fn grad_check_two_hidden_tanh() {
        let net = Network::init(spec(&[4, 8, 8, 2]), 11);
        let err = grad_check(&net, &[0.2, -0.4, 0.9, -1.3], 1e-5).unwrap();
        assert!(err <= 1e-4, "err = {err:e}");
    }

    #[test]
    fn grad_check_many_draws_all_architectures() {
        use rand::Rng;
        // Shapes matching the gold, proxy and policy networks of the lab.
        let shapes: [&[usize]; 4] = [&[40, 256, 256, 1], &[40, 16, 1], &[72, 32, 16], &[6, 4, 1]];
        for widths in shapes {
            for draw in 0..10 {
                let net = Network::init(spec(widths), 1000 + draw);
                let mut rng = crate::seed::rng(draw, "gradcheck", widths[0] as u64);
                let x: Vec<f64> = (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
                let err = grad_check(&net, &x, 1e-5).unwrap();
                assert!(err <= 1e-4, "widths {widths:?} draw {draw}: err = {err:e}");
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // Negative control: redo grad_check's comparison with one analytic
        // entry doubled and confirm the error blows past 1e-2.
        let net = Network::init(spec(&[3, 4, 1]), 21);
        let x = [0.4, -0.9, 0.6];
        let mut trace = ForwardTrace::default();
        net.forward_trace(&x, &mut trace).unwrap();
        let mut analytic = Gradients::zeros_like(&net);
        net.backward(&trace, &[1.0], &mut analytic).unwrap();

        let corrupted = analytic.layers[0].weights[0] * 2.0;
        let mut probe = net.clone();
        let eps = 1e-5;
        probe.params_mut().layers[0].weights[0] += eps;
        let f_plus = probe.forward_scalar(&x).unwrap();
        probe.params_mut().layers[0].weights[0] -= 2.0 * eps;
        let f_minus = probe.forward_scalar(&x).unwrap();
        let fd = (f_plus - f_minus) / (2.0 * eps);
        let err = (corrupted - fd).abs() / (corrupted.abs() + fd.abs() + 1e-12);
        assert!(err > 1e-2, "err = {err:e}");
    }

    #[test]
    fn sgd_zero_grad_keeps_params() {
        let mut net = Network::init(spec(&[4, 4, 1]), 8);
        let before = net.params().clone();
        let grads = Gradients::zeros_like(&net);
        Optimizer::sgd(0.1).step(&mut net, &grads).unwrap();
        assert_eq!(*net.params(), before);
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let mut net = Network::init(spec(&[1, 1]), 0);
        net.params_mut().layers[0].weights = vec![1.0];
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[0] = 2.0;
        Optimizer::sgd(0.1).step(&mut net, &grads).unwrap();
        assert!((net.params().layers[0].weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        // With constant gradient c, bias correction gives m_hat/sqrt(v_hat)
        // = sign(c), so the first update has magnitude ~ lr.
        let mut net = Network::init(spec(&[1, 1]), 0);
        net.params_mut().layers[0].weights = vec![1.0];
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[0] = 3.0;
        let lr = 0.05;
        Optimizer::adam(lr).step(&mut net, &grads).unwrap();
        let delta = (1.0 - net.params().layers[0].weights[0]).abs();
        assert!((delta - lr).abs() < 1e-8 * lr + 1e-9, "delta = {delta}");
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut net = Network::init(spec(&[3, 5, 1]), 17);
        let before = net.params().clone();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[2] = 4.2;
        Optimizer::sgd(0.0).step(&mut net, &grads).unwrap();
        assert_eq!(*net.params(), before);
        Optimizer::adam(0.0).step(&mut net, &grads).unwrap();
        assert_eq!(*net.params(), before);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = Network::init(spec(&[2, 3, 1]), 4);
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[1].weights[0] = f64::NAN;
        let err = Optimizer::adam(0.1).step(&mut net, &grads).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { layer: 1 });
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut net = Network::init(spec(&[2, 1]), 0);
        let grads = Gradients::zeros_like(&net);
        let mut opt = Optimizer::adam(0.01);
        for expected in 1..=5 {
            opt.step(&mut net, &grads).unwrap();
            assert_eq!(opt.step_count(), expected);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = Network::init(spec(&[5, 7, 2]), 99);
        let json = serde_json::to_string(&net).unwrap();
        let back: Network = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
