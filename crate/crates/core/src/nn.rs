//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! A [`DenseNet`] is an ordered list of affine layers, each followed by an
//! element-wise activation. Gradients are computed by hand from a [`Tape`]
//! recorded during the forward pass; there is no general autodiff graph.
//!
//! Weights are stored transposed (input-major) so that one-hot inputs, which
//! dominate the gridworld, skip whole columns in both passes.
//!
//! # Parameter file layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "APSPARAM"
//! version      u32       1
//! layers       u32       L
//! activations  L x u8    0 = identity, 1 = relu, 2 = elu
//! tensors      u32       2L
//! per tensor:
//!   name       u32 length + UTF-8 bytes ("layers.{i}.weight" / "layers.{i}.bias")
//!   ndim       u32
//!   dims       ndim x u64 (weight: [out, in], bias: [out])
//!   values     f64 x prod(dims), row-major
//! ```

use rand::Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &str = "APSPARAM";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// ELU with alpha = 1.
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative at pre-activation `z`, given the already computed output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Elu => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Elu),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// `weights_t[i * out_dim + o]` is the weight from input `i` to output `o`.
    weights_t: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    /// Uniform fan-in initialization in `[-sqrt(1/in), sqrt(1/in)]` for weights and biases.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (1.0 / in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-limit..=limit);
        let weights_t = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights_t,
            bias,
        }
    }

    /// Builds a layer from a row-major `out x in` weight matrix.
    pub fn from_row_major(
        out_dim: usize,
        in_dim: usize,
        weights: &[f64],
        bias: &[f64],
        activation: Activation,
    ) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        if weights.len() != out_dim * in_dim {
            return Err(Error::shape("layer weights", out_dim * in_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::shape("layer bias", out_dim, bias.len()));
        }
        let mut weights_t = vec![0.0; in_dim * out_dim];
        for o in 0..out_dim {
            for i in 0..in_dim {
                weights_t[i * out_dim + o] = weights[o * in_dim + i];
            }
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights_t,
            bias: bias.to_vec(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights_t[input * self.out_dim + out]
    }

    pub fn set_weight(&mut self, out: usize, input: usize, value: f64) {
        self.weights_t[input * self.out_dim + out] = value;
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Row-major `out x in` copy of the weights.
    pub fn weights_row_major(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.out_dim * self.in_dim];
        for o in 0..self.out_dim {
            for i in 0..self.in_dim {
                w[o * self.in_dim + i] = self.weight(o, i);
            }
        }
        w
    }

    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let col = &self.weights_t[i * self.out_dim..(i + 1) * self.out_dim];
            for (zo, &w) in z.iter_mut().zip(col) {
                *zo += xi * w;
            }
        }
    }
}

/// Intermediate values of one forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape("layer chaining", pair[0].out_dim, pair[1].in_dim));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized network with the given input width and `(width, activation)` per layer.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        spec: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || spec.iter().any(|&(w, _)| w == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(spec.len());
        let mut prev = input_dim;
        for &(width, act) in spec {
            layers.push(Layer::random(prev, width, act, rng));
            prev = width;
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights_t.len() + l.bias.len()).sum()
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation
            })
    }

    /// L2 norm over all parameters.
    pub fn param_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights_t.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine(&x, &mut z);
            for v in z.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            std::mem::swap(&mut x, &mut z);
        }
        Ok(x)
    }

    /// Forward pass that records what [`DenseNet::backward`] needs.
    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(&x, &mut z);
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok(Tape {
            inputs,
            pre,
            output: x,
        })
    }

    fn check_tape(&self, tape: &Tape, output_grad: &[f64]) -> Result<()> {
        if tape.pre.len() != self.layers.len() {
            return Err(Error::shape("tape depth", self.layers.len(), tape.pre.len()));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape("output gradient", self.output_dim(), output_grad.len()));
        }
        Ok(())
    }

    /// Adds the gradient of `output . output_grad` w.r.t. every parameter into `grads`.
    /// Returns the gradient w.r.t. the input when `want_input_grad` is set.
    pub fn accumulate_gradients(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut Gradients,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_tape(tape, output_grad)?;
        if !grads.matches(self) {
            return Err(Error::ArchitectureMismatch(
                "gradient bundle does not match network".into(),
            ));
        }
        let mut dy = output_grad.to_vec();
        let mut dz = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre[l];
            let y: &[f64] = if l + 1 == self.layers.len() {
                &tape.output
            } else {
                &tape.inputs[l + 1]
            };
            dz.clear();
            dz.extend(
                dy.iter()
                    .zip(z)
                    .zip(y)
                    .map(|((&g, &zv), &yv)| g * layer.activation.derivative(zv, yv)),
            );
            let g = &mut grads.layers[l];
            for (gb, &d) in g.bias.iter_mut().zip(&dz) {
                *gb += d;
            }
            let x = &tape.inputs[l];
            let out = layer.out_dim;
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let gcol = &mut g.weights_t[i * out..(i + 1) * out];
                for (gw, &d) in gcol.iter_mut().zip(&dz) {
                    *gw += xi * d;
                }
            }
            if l > 0 || want_input_grad {
                dy.clear();
                dy.extend((0..layer.in_dim).map(|i| {
                    let col = &layer.weights_t[i * out..(i + 1) * out];
                    col.iter().zip(&dz).map(|(w, d)| w * d).sum::<f64>()
                }));
            }
        }
        Ok(want_input_grad.then_some(dy))
    }

    /// Exact gradients of `output . output_grad` for a single input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<GradientBundle> {
        let tape = self.forward_tape(input)?;
        let mut params = Gradients::zeros_like(self);
        let input_grad = self
            .accumulate_gradients(&tape, output_grad, &mut params, true)?
            .unwrap_or_default();
        Ok(GradientBundle { params, input_grad })
    }

    /// Copies every parameter of `online` into `self`.
    pub fn copy_from(&mut self, online: &DenseNet) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(Error::ArchitectureMismatch(
                "target sync requires identical architectures".into(),
            ));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weights_t.copy_from_slice(&o.weights_t);
            t.bias.copy_from_slice(&o.bias);
        }
        Ok(())
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.put_raw(PARAM_MAGIC.as_bytes());
        enc.put_u32(PARAM_VERSION);
        enc.put_u32(self.layers.len() as u32);
        for layer in &self.layers {
            enc.put_u8(layer.activation.tag());
        }
        enc.put_u32(2 * self.layers.len() as u32);
        for (l, layer) in self.layers.iter().enumerate() {
            enc.put_str(&format!("layers.{l}.weight"));
            enc.put_u32(2);
            enc.put_u64(layer.out_dim as u64);
            enc.put_u64(layer.in_dim as u64);
            for v in layer.weights_row_major() {
                enc.put_f64(v);
            }
            enc.put_str(&format!("layers.{l}.bias"));
            enc.put_u32(1);
            enc.put_u64(layer.out_dim as u64);
            for &v in &layer.bias {
                enc.put_f64(v);
            }
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        dec.expect_magic(PARAM_MAGIC)?;
        let version = dec.u32()?;
        if version != PARAM_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: PARAM_VERSION,
            });
        }
        let n_layers = dec.u32()? as usize;
        let activations = (0..n_layers)
            .map(|_| Activation::from_tag(dec.u8()?))
            .collect::<Result<Vec<_>>>()?;
        let n_tensors = dec.u32()? as usize;
        if n_tensors != 2 * n_layers {
            return Err(Error::Format(format!(
                "expected {} tensors, found {n_tensors}",
                2 * n_layers
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (l, act) in activations.into_iter().enumerate() {
            let (wdims, w) = read_tensor(dec, &format!("layers.{l}.weight"))?;
            let (bdims, b) = read_tensor(dec, &format!("layers.{l}.bias"))?;
            if wdims.len() != 2 || bdims != [wdims[0]] {
                return Err(Error::Format(format!("inconsistent shapes in layer {l}")));
            }
            layers.push(Layer::from_row_major(wdims[0], wdims[1], &w, &b, act)?);
        }
        Self::from_layers(layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes);
        let net = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(net)
    }
}

fn read_tensor(dec: &mut Decoder<'_>, expected_name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let name = dec.str()?;
    if name != expected_name {
        return Err(Error::Format(format!(
            "expected tensor `{expected_name}`, found `{name}`"
        )));
    }
    let ndim = dec.u32()? as usize;
    let dims = (0..ndim).map(|_| dec.usize()).collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
    let raw = dec.take(count.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflow".into()))?)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((dims, values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// Same transposed layout as [`Layer`].
    pub weights_t: Vec<f64>,
    pub bias: Vec<f64>,
    out_dim: usize,
}

impl LayerGrad {
    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights_t[input * self.out_dim + out]
    }
}

/// Per-parameter gradient arrays shaped like one [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights_t: vec![0.0; l.weights_t.len()],
                    bias: vec![0.0; l.bias.len()],
                    out_dim: l.out_dim,
                })
                .collect(),
        }
    }

    pub fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights_t.len() == l.weights_t.len()
                    && g.bias.len() == l.bias.len()
                    && g.out_dim == l.out_dim
            })
    }

    pub fn fill_zero(&mut self) {
        for g in &mut self.layers {
            g.weights_t.fill(0.0);
            g.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights_t.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    /// `(name, values)` for every tensor, in serialization order.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &[f64])> {
        self.layers.iter().enumerate().flat_map(|(l, g)| {
            [
                (format!("layers.{l}.weight"), g.weights_t.as_slice()),
                (format!("layers.{l}.bias"), g.bias.as_slice()),
            ]
        })
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights_t.iter().chain(&g.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = |t: &[f64]| t.iter().all(|v| v.is_finite());
        if self.layers.iter().all(|g| finite(&g.weights_t) && finite(&g.bias)) {
            return Ok(());
        }
        for (name, t) in self.tensors() {
            if !finite(t) {
                return Err(Error::NonFinite { tensor: name });
            }
        }
        Ok(())
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.put_usize(self.layers.len());
        for g in &self.layers {
            enc.put_usize(g.out_dim);
            enc.put_f64s(&g.weights_t);
            enc.put_f64s(&g.bias);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let n = dec.usize()?;
        let layers = (0..n)
            .map(|_| {
                let out_dim = dec.usize()?;
                let weights_t = dec.f64s()?;
                let bias = dec.f64s()?;
                Ok(LayerGrad {
                    weights_t,
                    bias,
                    out_dim,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub params: Gradients,
    pub input_grad: Vec<f64>,
}

/// Rescales `grads` in place so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0 && max_norm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "max_norm must be positive and finite, got {max_norm}"
        )));
    }
    grads.check_finite()?;
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// `target := online`, parameter for parameter.
pub fn sync_target(online: &DenseNet, target: &mut DenseNet) -> Result<()> {
    target.copy_from(online)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 0.00015,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }

    /// One bias-corrected Adam update of `net` using `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) || !self.m.matches(net) {
            return Err(Error::ArchitectureMismatch(
                "Adam state, gradients and parameters must share one shape".into(),
            ));
        }
        grads.check_finite()?;
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            update(&mut layer.weights_t, &g.weights_t, &mut m.weights_t, &mut v.weights_t);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
        Ok(())
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.put_f64(self.config.learning_rate);
        enc.put_f64(self.config.beta1);
        enc.put_f64(self.config.beta2);
        enc.put_f64(self.config.epsilon);
        enc.put_u64(self.step);
        self.m.encode(enc);
        self.v.encode(enc);
    }

    pub fn decode(dec: &mut Decoder<'_>, net: &DenseNet) -> Result<Self> {
        let config = AdamConfig {
            learning_rate: dec.f64()?,
            beta1: dec.f64()?,
            beta2: dec.f64()?,
            epsilon: dec.f64()?,
        };
        let step = dec.u64()?;
        let m = Gradients::decode(dec)?;
        let v = Gradients::decode(dec)?;
        if !m.matches(net) || !v.matches(net) {
            return Err(Error::Format("Adam moments do not match network shape".into()));
        }
        Ok(Self { config, step, m, v })
    }
}
