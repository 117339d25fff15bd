//! Sequential differentiable computation graph.
//!
//! A [`Network`] owns an ordered list of layers, each holding its parameters
//! and the forward caches needed for reverse-mode differentiation. A forward
//! pass may be run against the raw parameters or against *effective*
//! parameters derived from a [`ScaleSet`] (weight masks, neuron
//! perturbations). Backward always produces gradients with respect to the
//! effective parameters used by the matching forward pass, plus the gradient
//! with respect to the input batch; callers chain those into mask or
//! perturbation gradients as needed.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod pool;

pub use activation::{ActKind, Activation};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use pool::MaxPool2x2;

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward-pass mode. Dropout and batch-norm statistics behave differently
/// in training; defenses and evaluation always run in `Eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Multiplicative factors applied to one layer's parameters for a single
/// forward/backward pass.
///
/// On dense/conv layers `elementwise` scales individual weight entries and
/// `neuron_w`/`neuron_b` scale whole output-neuron rows and biases. On
/// batch-norm layers `neuron_w`/`neuron_b` scale the per-channel scale and
/// shift parameters.
#[derive(Clone, Debug, Default)]
pub struct LayerScale {
    pub elementwise: Option<Vec<f32>>,
    pub neuron_w: Option<Vec<f32>>,
    pub neuron_b: Option<Vec<f32>>,
}

/// Per-layer scales for one forward pass, keyed by layer index.
#[derive(Clone, Debug, Default)]
pub struct ScaleSet {
    entries: BTreeMap<usize, LayerScale>,
}

impl ScaleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, scale: LayerScale) {
        self.entries.insert(layer, scale);
    }

    pub fn get(&self, layer: usize) -> Option<&LayerScale> {
        self.entries.get(&layer)
    }

    pub fn merge_entry(&mut self, layer: usize, scale: LayerScale) {
        let e = self.entries.entry(layer).or_default();
        if scale.elementwise.is_some() {
            e.elementwise = scale.elementwise;
        }
        if scale.neuron_w.is_some() {
            e.neuron_w = scale.neuron_w;
        }
        if scale.neuron_b.is_some() {
            e.neuron_b = scale.neuron_b;
        }
    }
}

#[derive(Clone, Debug)]
pub enum LayerKind {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    MaxPool2x2(MaxPool2x2),
    Dropout(Dropout),
    Activation(Activation),
    Flatten(Flatten),
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Layer { name: name.into(), kind }
    }

    /// True for layers whose weights can carry an elementwise mask.
    pub fn is_maskable(&self) -> bool {
        match &self.kind {
            LayerKind::Dense(d) => d.maskable,
            LayerKind::Conv2d(c) => c.maskable,
            _ => false,
        }
    }
}

/// A sequential differentiable network over batched tensors.
#[derive(Clone, Debug)]
pub struct Network {
    pub(crate) layers: Vec<Layer>,
    input_shape: Vec<usize>,
    classes: usize,
    forward_ran: bool,
    output_shape: Vec<usize>,
    dropout_rng: ChaCha8Rng,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, classes: usize) -> Self {
        Network {
            layers,
            input_shape,
            classes,
            forward_ran: false,
            output_shape: Vec::new(),
            dropout_rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Seeds the RNG that draws dropout masks during training passes.
    pub fn seed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Runs the graph on a batched input `[N, ...input_shape]` with raw
    /// parameters, retaining activations for a later [`Self::backward`].
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_scaled(input, mode, None)
    }

    /// Forward pass with optional effective-parameter scales.
    pub fn forward_scaled(
        &mut self,
        input: &Tensor,
        mode: Mode,
        scales: Option<&ScaleSet>,
    ) -> Result<Tensor> {
        let got = input.shape();
        if got.len() != self.input_shape.len() + 1 || got[1..] != self.input_shape[..] {
            return Err(Error::dimension(format!(
                "network input: expected [N, {:?}], got {:?}",
                self.input_shape, got
            )));
        }
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let scale = scales.and_then(|s| s.get(idx));
            let name = layer.name.as_str();
            x = match &mut layer.kind {
                LayerKind::Dense(l) => l.forward(&x, scale, name)?,
                LayerKind::Conv2d(l) => l.forward(&x, scale, name)?,
                LayerKind::BatchNorm2d(l) => l.forward(&x, mode, scale, name)?,
                LayerKind::MaxPool2x2(l) => {
                    reject_scale(scale, name)?;
                    l.forward(&x, name)?
                }
                LayerKind::Dropout(l) => {
                    reject_scale(scale, name)?;
                    l.forward(&x, mode, &mut self.dropout_rng)
                }
                LayerKind::Activation(l) => {
                    reject_scale(scale, name)?;
                    l.forward(&x)
                }
                LayerKind::Flatten(l) => {
                    reject_scale(scale, name)?;
                    l.forward(&x)?
                }
            };
        }
        self.forward_ran = true;
        self.output_shape = x.shape().to_vec();
        Ok(x)
    }

    /// Back-propagates `dout` (gradient of the loss with respect to the last
    /// forward pass's output) through the graph. Parameter gradients are
    /// written into each parameter tensor's grad buffer (overwriting any
    /// previous pass); the returned tensor is the gradient with respect to
    /// the input batch.
    pub fn backward(&mut self, dout: &Tensor) -> Result<Tensor> {
        if !self.forward_ran {
            return Err(Error::State("backward called before forward".into()));
        }
        if dout.shape() != self.output_shape.as_slice() {
            return Err(Error::dimension(format!(
                "backward seed: expected {:?}, got {:?}",
                self.output_shape,
                dout.shape()
            )));
        }
        let mut g = dout.clone();
        for layer in self.layers.iter_mut().rev() {
            let name = layer.name.as_str();
            g = match &mut layer.kind {
                LayerKind::Dense(l) => l.backward(&g, name)?,
                LayerKind::Conv2d(l) => l.backward(&g, name)?,
                LayerKind::BatchNorm2d(l) => l.backward(&g, name)?,
                LayerKind::MaxPool2x2(l) => l.backward(&g, name)?,
                LayerKind::Dropout(l) => l.backward(&g, name)?,
                LayerKind::Activation(l) => l.backward(&g, name)?,
                LayerKind::Flatten(l) => l.backward(&g, name)?,
            };
        }
        Ok(g)
    }

    /// Named parameter tensors in stable layer order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let n = &layer.name;
            match &layer.kind {
                LayerKind::Dense(l) => {
                    out.push((format!("{n}.weight"), &l.w));
                    out.push((format!("{n}.bias"), &l.b));
                }
                LayerKind::Conv2d(l) => {
                    out.push((format!("{n}.weight"), &l.w));
                    out.push((format!("{n}.bias"), &l.b));
                }
                LayerKind::BatchNorm2d(l) => {
                    out.push((format!("{n}.scale"), &l.scale));
                    out.push((format!("{n}.shift"), &l.shift));
                }
                _ => {}
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            let n = layer.name.clone();
            match &mut layer.kind {
                LayerKind::Dense(l) => {
                    out.push((format!("{n}.weight"), &mut l.w));
                    out.push((format!("{n}.bias"), &mut l.b));
                }
                LayerKind::Conv2d(l) => {
                    out.push((format!("{n}.weight"), &mut l.w));
                    out.push((format!("{n}.bias"), &mut l.b));
                }
                LayerKind::BatchNorm2d(l) => {
                    out.push((format!("{n}.scale"), &mut l.scale));
                    out.push((format!("{n}.shift"), &mut l.shift));
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable named buffers (batch-norm running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let LayerKind::BatchNorm2d(l) = &layer.kind {
                out.push((format!("{}.running_mean", layer.name), &l.running_mean));
                out.push((format!("{}.running_var", layer.name), &l.running_var));
            }
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let LayerKind::BatchNorm2d(l) = &mut layer.kind {
                out.push((format!("{}.running_mean", layer.name), &mut l.running_mean));
                out.push((format!("{}.running_var", layer.name), &mut l.running_var));
            }
        }
        out
    }

    /// Total trainable parameter dimension d.
    pub fn total_dim(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// (name, offset, len) for every parameter tensor, in order.
    pub fn param_layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (name, t) in self.named_params() {
            out.push((name, off, t.len()));
            off += t.len();
        }
        out
    }

    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (_, t) in self.named_params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.total_dim() {
            return Err(Error::dimension("flat parameter vector length mismatch"));
        }
        let mut off = 0;
        for (_, t) in self.named_params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Gradients in flat layout; zero for tensors without a grad buffer.
    pub fn flat_grads(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (_, t) in self.named_params() {
            match t.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat(0.0).take(t.len())),
            }
        }
        out
    }

    /// Order-sensitive fingerprint of all parameter bits; used to assert
    /// that defense phases leave the model untouched.
    pub fn param_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (_, t) in self.named_params() {
            for v in t.data() {
                h ^= v.to_bits() as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        for (_, t) in self.named_buffers() {
            for v in t.data() {
                h ^= v.to_bits() as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

fn reject_scale(scale: Option<&LayerScale>, name: &str) -> Result<()> {
    if scale.is_some() {
        return Err(Error::Contract(format!(
            "layer '{name}' does not accept parameter scales"
        )));
    }
    Ok(())
}
