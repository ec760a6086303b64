use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, PoolIndices};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    Unpool,
    Deconv,
    Softmax,
}

/// How the decoder doubles resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    /// Scatter to the argmax positions recorded by the matching max pool.
    Unpool,
    /// Learned 4x4 stride-2 transposed convolution.
    Deconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride: 1,
            in_channels,
            out_channels,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            kernel: 4,
            stride: 2,
            in_channels,
            out_channels,
        }
    }

    fn elementwise(kind: LayerKind, channels: usize) -> Self {
        let (kernel, stride) = match kind {
            LayerKind::MaxPool | LayerKind::Unpool => (2, 2),
            _ => (1, 1),
        };
        LayerSpec {
            kind,
            kernel,
            stride,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn relu(channels: usize) -> Self {
        Self::elementwise(LayerKind::Relu, channels)
    }

    pub fn maxpool(channels: usize) -> Self {
        Self::elementwise(LayerKind::MaxPool, channels)
    }

    pub fn unpool(channels: usize) -> Self {
        Self::elementwise(LayerKind::Unpool, channels)
    }

    pub fn softmax(channels: usize) -> Self {
        Self::elementwise(LayerKind::Softmax, channels)
    }

    /// `(weight shape, bias length)`; `None` for parameter-free layers.
    pub fn param_shape(&self) -> Option<([usize; 4], usize)> {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv => Some(([self.out_channels, self.in_channels, k, k], self.out_channels)),
            LayerKind::Deconv => Some(([self.in_channels, self.out_channels, k, k], 0)),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.in_channels * self.kernel * self.kernel,
            // each output pixel of a stride-2 transposed conv sees (k/2)^2 taps per channel
            LayerKind::Deconv => self.in_channels * (self.kernel / 2) * (self.kernel / 2),
            _ => 0,
        }
    }
}

/// Encoder-decoder layout: `stage_widths.len()` encoder stages of
/// `convs_per_stage` (conv + ReLU) pairs and a 2x2 max pool, mirrored by the
/// decoder, then a classifier (or regressor) convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub stage_widths: Vec<usize>,
    pub convs_per_stage: usize,
    pub kernel: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            stage_widths: vec![8, 16],
            convs_per_stage: 2,
            kernel: 3,
        }
    }
}

/// What sits on top of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `K` output channels followed by a softmax.
    Classes(usize),
    /// One unconstrained output channel.
    Regression,
}

impl Architecture {
    pub fn layer_specs(&self, input_channels: usize, decoder: DecoderMode, head: Head) -> Vec<LayerSpec> {
        let k = self.kernel;
        let mut specs = Vec::new();
        let mut ch = input_channels;
        for &w in &self.stage_widths {
            for _ in 0..self.convs_per_stage {
                specs.push(LayerSpec::conv(ch, w, k));
                specs.push(LayerSpec::relu(w));
                ch = w;
            }
            specs.push(LayerSpec::maxpool(w));
        }
        for (s, &w) in self.stage_widths.iter().enumerate().rev() {
            specs.push(match decoder {
                DecoderMode::Unpool => LayerSpec::unpool(w),
                DecoderMode::Deconv => LayerSpec::deconv(w, w),
            });
            let next = if s == 0 { w } else { self.stage_widths[s - 1] };
            for i in 0..self.convs_per_stage {
                let out = if i + 1 == self.convs_per_stage { next } else { w };
                specs.push(LayerSpec::conv(ch, out, k));
                specs.push(LayerSpec::relu(out));
                ch = out;
            }
        }
        match head {
            Head::Classes(classes) => {
                specs.push(LayerSpec::conv(ch, classes, k));
                specs.push(LayerSpec::softmax(classes));
            }
            Head::Regression => specs.push(LayerSpec::conv(ch, 1, k)),
        }
        specs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Parameter gradients, one entry per layer (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrad>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| ParamGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, f: f64) {
        for g in &mut self.layers {
            g.weight.iter_mut().chain(g.bias.iter_mut()).for_each(|x| *x *= f);
        }
    }

    /// Same order as [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(&g.bias).copied())
            .collect()
    }
}

/// Everything a forward pass leaves behind for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Tensor>,
    output: Tensor,
    pools: Vec<Option<PoolIndices>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Input of layer `i`.
    pub fn input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn pool_indices(&self, layer: usize) -> Option<&PoolIndices> {
        self.pools[layer].as_ref()
    }
}

/// A feed-forward stack of layers.
///
/// [`Network::trace`] / [`Network::backward_trace`] are pure and may run on
/// many threads at once; [`Network::forward`] / [`Network::backward`] keep the
/// last trace inside the network instead.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    /// For each unpool layer, the max pool whose indices it consumes.
    pairs: Vec<Option<usize>>,
    cache: Option<Trace>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    /// All parameters zero.
    pub fn new(specs: Vec<LayerSpec>) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (shape, nb) = spec.param_shape().unwrap_or(([0, 0, 0, 0], 0));
                Layer {
                    spec,
                    weight: Tensor::zeros(&shape),
                    bias: vec![0.0; nb],
                }
            })
            .collect();
        Network::from_layers(layers)
    }

    /// Weights drawn from `N(0, 2 / fan_in)`, biases zero.
    pub fn init(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Network::new(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let fan_in = layer.spec.fan_in();
            if fan_in == 0 {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            layer
                .weight
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = normal.sample(&mut rng));
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        let mut pairs = vec![None; layers.len()];
        let mut open_pools = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            let s = &layer.spec;
            if i > 0 && layers[i - 1].spec.out_channels != s.in_channels {
                return Err(Error::mismatch(
                    format!("layer {i} input with {} channels", layers[i - 1].spec.out_channels),
                    s.in_channels,
                ));
            }
            if let Some((shape, nb)) = s.param_shape() {
                if layer.weight.shape() != shape || layer.bias.len() != nb {
                    return Err(Error::mismatch(
                        format!("layer {i} parameters {shape:?} + {nb}"),
                        format!("{:?} + {}", layer.weight.shape(), layer.bias.len()),
                    ));
                }
            }
            match s.kind {
                LayerKind::Conv if s.kernel % 2 == 0 || s.stride != 1 => {
                    return Err(Error::invalid(format!("layer {i}: conv must be odd-sized, stride 1")));
                }
                LayerKind::Deconv if s.kernel % 2 != 0 || s.kernel < 2 || s.stride != 2 => {
                    return Err(Error::invalid(format!("layer {i}: deconv must be even-sized, stride 2")));
                }
                LayerKind::MaxPool | LayerKind::Unpool if s.kernel != 2 || s.stride != 2 => {
                    return Err(Error::invalid(format!("layer {i}: pooling must be 2x2 stride 2")));
                }
                LayerKind::Relu | LayerKind::MaxPool | LayerKind::Unpool | LayerKind::Softmax
                    if s.in_channels != s.out_channels =>
                {
                    return Err(Error::invalid(format!("layer {i}: channel count must be preserved")));
                }
                LayerKind::Softmax if i + 1 != layers.len() => {
                    return Err(Error::invalid("softmax must be the last layer"));
                }
                LayerKind::MaxPool => open_pools.push(i),
                LayerKind::Unpool => {
                    let j = open_pools
                        .pop()
                        .ok_or_else(|| Error::invalid(format!("layer {i}: unpool without a matching max pool")))?;
                    if layers[j].spec.out_channels != s.in_channels {
                        return Err(Error::mismatch(
                            format!("unpool {i} with the {} channels of pool {j}", layers[j].spec.out_channels),
                            s.in_channels,
                        ));
                    }
                    pairs[i] = Some(j);
                }
                LayerKind::Deconv => {
                    open_pools.pop();
                }
                _ => {}
            }
        }
        Ok(Network {
            layers,
            pairs,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Number of max-pool layers.
    pub fn encoder_stages(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.spec.kind == LayerKind::MaxPool)
            .count()
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].spec.in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_channels
    }

    pub fn ends_in_softmax(&self) -> bool {
        self.layers[self.layers.len() - 1].spec.kind == LayerKind::Softmax
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::mismatch(self.parameter_count(), values.len()));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for v in l.weight.data_mut().iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mutable reference to the `i`-th parameter in [`Network::parameters`] order.
    pub fn parameter_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let (nw, nb) = (l.weight.len(), l.bias.len());
            if i < nw {
                return Some(&mut l.weight.data_mut()[i]);
            }
            if i < nw + nb {
                return Some(&mut l.bias[i - nw]);
            }
            i -= nw + nb;
        }
        None
    }

    /// Forward pass keeping every intermediate needed by [`Network::backward_trace`].
    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.input_channels() {
            return Err(Error::mismatch(format!("{} input channels", self.input_channels()), c));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pools = vec![None; self.layers.len()];
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = match layer.spec.kind {
                LayerKind::Conv => ops::conv_forward(&cur, &layer.weight, &layer.bias)?,
                LayerKind::Relu => ops::relu_forward(&cur),
                LayerKind::MaxPool => {
                    let (y, idx) = ops::maxpool_forward(&cur)?;
                    pools[i] = Some(idx);
                    y
                }
                LayerKind::Unpool => {
                    let j = self.pairs[i].expect("validated at construction");
                    let idx = pools[j].as_ref().expect("pool runs before its unpool");
                    ops::unpool_forward(&cur, idx)?
                }
                LayerKind::Deconv => ops::deconv_forward(&cur, &layer.weight)?,
                LayerKind::Softmax => ops::softmax_forward(&cur)?,
            };
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok(Trace {
            inputs,
            output: cur,
            pools,
        })
    }

    /// Input of a trailing softmax, or the network output when there is none.
    pub fn logits<'t>(&self, trace: &'t Trace) -> &'t Tensor {
        if self.ends_in_softmax() {
            &trace.inputs[self.layers.len() - 1]
        } else {
            &trace.output
        }
    }

    /// Reverse-mode gradients from `dL/d(output)`.
    pub fn backward_trace(&self, trace: &Trace, grad_output: &Tensor) -> Result<Gradients> {
        self.backward_range(trace, grad_output, self.layers.len())
    }

    /// Reverse-mode gradients from `dL/d(logits)`, skipping a trailing softmax.
    pub fn backward_logits(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Gradients> {
        let end = if self.ends_in_softmax() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        self.backward_range(trace, grad_logits, end)
    }

    fn backward_range(&self, trace: &Trace, grad: &Tensor, end: usize) -> Result<Gradients> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::invalid("trace does not belong to this network"));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad.clone();
        for i in (0..end).rev() {
            let layer = &self.layers[i];
            let x = &trace.inputs[i];
            g = match layer.spec.kind {
                LayerKind::Conv => {
                    let (dx, dw, db) = ops::conv_backward(x, &layer.weight, &g)?;
                    grads.layers[i] = ParamGrad {
                        weight: dw.into_data(),
                        bias: db,
                    };
                    dx
                }
                LayerKind::Relu => ops::relu_backward(x, &g)?,
                LayerKind::MaxPool => {
                    let idx = trace.pools[i].as_ref().expect("recorded in trace");
                    ops::maxpool_backward(&g, idx)?
                }
                LayerKind::Unpool => {
                    let j = self.pairs[i].expect("validated at construction");
                    let idx = trace.pools[j].as_ref().expect("recorded in trace");
                    ops::unpool_backward(&g, idx)?
                }
                LayerKind::Deconv => {
                    let (dx, dw) = ops::deconv_backward(x, &layer.weight, &g)?;
                    grads.layers[i].weight = dw.into_data();
                    dx
                }
                // always the last layer, so its output is the trace output
                LayerKind::Softmax => ops::softmax_backward(&trace.output, &g)?,
            };
        }
        Ok(grads)
    }

    /// Forward pass that remembers its trace for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let trace = self.trace(x)?;
        let out = trace.output.clone();
        self.cache = Some(trace);
        Ok(out)
    }

    /// Backward pass against the trace of the last [`Network::forward`].
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Gradients> {
        let trace = self.cache.as_ref().ok_or(Error::MissingForwardCache)?;
        self.backward_trace(trace, grad_output)
    }

    /// The trace kept by the last [`Network::forward`].
    pub fn cached_trace(&self) -> Option<&Trace> {
        self.cache.as_ref()
    }

    /// Plain SGD step: `p -= lr * g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight
                .data_mut()
                .iter_mut()
                .zip(&g.weight)
                .for_each(|(p, d)| *p -= lr * d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(p, d)| *p -= lr * d);
        }
        self.cache = None;
    }
}
