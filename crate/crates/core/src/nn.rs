//! Dense multilayer perceptrons with hand-written reverse-mode gradients.
//!
//! Everything here is batch-major: a batch of `n` vectors of width `d` is a
//! flat row-major `[f64]` of length `n * d`. Matrix products go through
//! `matrixmultiply::dgemm`; the rest is plain loops.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("forward cache does not belong to the current network parameters")]
    StaleCache,
    #[error("architecture mismatch between networks")]
    Architecture,
    #[error("invalid network layout: {0}")]
    Layout(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Symmetric fan-in bound `2 / sqrt(fan_in)` for weight initialisation.
pub fn fanin_bound(fan_in: usize) -> f64 {
    2.0 / (fan_in as f64).sqrt()
}

/// Samples a `rows x cols` row-major weight matrix, where `cols` is the fan-in,
/// with entries uniform in `[-2/sqrt(cols), 2/sqrt(cols))`.
pub fn init_fanin<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    assert!(rows >= 1 && cols >= 1, "layer dimensions must be positive");
    let bound = fanin_bound(cols);
    let dist = Uniform::new(-bound, bound).expect("finite positive bound");
    (0..rows * cols).map(|_| dist.sample(rng)).collect()
}

/// One affine layer followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            inputs,
            outputs,
            weights: init_fanin(outputs, inputs, rng),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNetwork {
    layers: Vec<Dense>,
    #[serde(skip, default = "fresh_stamp")]
    stamp: u64,
}

impl PartialEq for DenseNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations retained by [`DenseNetwork::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    batch: usize,
    /// `values[0]` is the input; `values[i + 1]` the output of layer `i`.
    values: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache always holds the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl DenseNetwork {
    /// Builds a network over `sizes = [input, hidden.., output]` using `hidden`
    /// activations everywhere except the last layer.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::new(w[0], w[1], act, rng)
            })
            .collect();
        Self {
            layers,
            stamp: fresh_stamp(),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Layout("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NnError::Layout(format!(
                    "layer {i} has inconsistent shapes"
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::Layout(format!(
                    "layer output {} feeds input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self {
            layers,
            stamp: fresh_stamp(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to parameters; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<ForwardCache> {
        let expected = batch * self.input_dim();
        if input.len() != expected {
            return Err(NnError::Dimension {
                expected,
                got: input.len(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let x = values.last().expect("non-empty");
            let mut z = vec![0.0; batch * layer.outputs];
            for row in z.chunks_exact_mut(layer.outputs) {
                row.copy_from_slice(&layer.bias);
            }
            // z (batch x out) += x (batch x in) * W^T
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                x,
                (layer.inputs as isize, 1),
                &layer.weights,
                (1, layer.inputs as isize),
                &mut z,
                1.0,
            );
            if layer.activation != Activation::Identity {
                for v in &mut z {
                    *v = layer.activation.apply(*v);
                }
            }
            values.push(z);
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            batch,
            values,
        })
    }

    /// Single-sample inference.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(input, 1)?;
        Ok(cache.output().to_vec())
    }

    /// Reverse pass. `output_grad` is dL/d(output) for every batch row; the
    /// returned gradients are summed over the batch. The second element is
    /// dL/d(input).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<(GradientSet, Vec<f64>)> {
        let (grads, dx) = self.backward_impl(cache, output_grad, true)?;
        Ok((grads.expect("parameter gradients requested"), dx))
    }

    /// Reverse pass that only propagates to the input, skipping parameter
    /// gradients.
    pub fn input_gradient(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_impl(cache, output_grad, false)?.1)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        want_params: bool,
    ) -> Result<(Option<GradientSet>, Vec<f64>)> {
        if cache.stamp != self.stamp {
            return Err(NnError::StaleCache);
        }
        let batch = cache.batch;
        let expected = batch * self.output_dim();
        if output_grad.len() != expected {
            return Err(NnError::Dimension {
                expected,
                got: output_grad.len(),
            });
        }
        let mut layer_grads = Vec::with_capacity(if want_params { self.layers.len() } else { 0 });
        let mut delta = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &cache.values[i + 1];
            let x = &cache.values[i];
            if layer.activation != Activation::Identity {
                for (d, &yv) in delta.iter_mut().zip(y) {
                    *d *= layer.activation.derivative_from_output(yv);
                }
            }
            if want_params {
                let mut dw = vec![0.0; layer.outputs * layer.inputs];
                // dW (out x in) = delta^T (out x batch) * x (batch x in)
                gemm(
                    layer.outputs,
                    batch,
                    layer.inputs,
                    &delta,
                    (1, layer.outputs as isize),
                    x,
                    (layer.inputs as isize, 1),
                    &mut dw,
                    0.0,
                );
                let mut db = vec![0.0; layer.outputs];
                for row in delta.chunks_exact(layer.outputs) {
                    for (b, d) in db.iter_mut().zip(row) {
                        *b += d;
                    }
                }
                layer_grads.push(LayerGradient {
                    weights: dw,
                    bias: db,
                });
            }
            let mut dx = vec![0.0; batch * layer.inputs];
            // dx (batch x in) = delta (batch x out) * W (out x in)
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &delta,
                (layer.outputs as isize, 1),
                &layer.weights,
                (layer.inputs as isize, 1),
                &mut dx,
                0.0,
            );
            delta = dx;
        }
        let grads = want_params.then(|| {
            layer_grads.reverse();
            GradientSet {
                layers: layer_grads,
            }
        });
        Ok((grads, delta))
    }

    /// Polyak averaging: `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &DenseNetwork, tau: f64) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(NnError::Architecture);
        }
        debug_assert!(tau > 0.0 && tau <= 1.0);
        for (t, o) in self.layers_mut().iter_mut().zip(&online.layers) {
            if tau == 1.0 {
                t.weights.copy_from_slice(&o.weights);
                t.bias.copy_from_slice(&o.bias);
                continue;
            }
            for (tv, ov) in t.weights.iter_mut().zip(&o.weights) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
            for (tv, ov) in t.bias.iter_mut().zip(&o.bias) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }
}

/// `c = beta * c + a * b` with arbitrary (row, column) strides for `a` and `b`;
/// `c` is dense row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers pass buffers whose extents match the given shapes and
    // strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-parameter gradients mirroring a network's layer shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, net: &DenseNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    /// Global L2-norm clipping. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, threshold: f64) -> f64 {
        debug_assert!(threshold > 0.0);
        let norm = self.global_norm();
        if norm > threshold {
            self.scale(threshold / norm);
        }
        norm
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: GradientSet,
    second: GradientSet,
}

impl AdamState {
    pub fn new(net: &DenseNetwork, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: GradientSet::zeros_like(net),
            second: GradientSet::zeros_like(net),
        }
    }

    pub fn matches(&self, net: &DenseNetwork) -> bool {
        self.first.matches(net) && self.second.matches(net)
    }

    /// One bias-corrected Adam update, moving `net` against `grads`.
    pub fn step(&mut self, net: &mut DenseNetwork, grads: &GradientSet) -> Result<()> {
        if !grads.matches(net) || !self.matches(net) {
            return Err(NnError::Architecture);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.first.layers[li];
            let v = &mut self.second.layers[li];
            update(
                &mut layer.weights,
                &g.weights,
                &mut m.weights,
                &mut v.weights,
            );
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
        Ok(())
    }
}
