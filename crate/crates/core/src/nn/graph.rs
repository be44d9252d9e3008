//! Static layer graph with cached forward activations and reverse-mode
//! gradient propagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, GroupStats, Padding};
use super::params::{Gradients, ParamStore};
use super::tensor::{Real, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Input,
    Conv,
    TransposedConv,
    MaxPool,
    GroupNorm,
    ReLU,
    Sigmoid,
    Concat,
    Add,
}

/// Description of one graph node; also the unit of the model manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Kernel extent as `[freq, time]`; pooling window for `MaxPool`.
    pub kernel: [usize; 2],
    /// Stride as `[freq, time]`.
    pub stride: [usize; 2],
    pub groups: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub freq_padding: Padding,
    pub inputs: Vec<usize>,
}

impl LayerSpec {
    fn plain(name: impl Into<String>, kind: LayerKind, channels: usize, inputs: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            kind,
            kernel: [1, 1],
            stride: [1, 1],
            groups: 1,
            in_channels: channels,
            out_channels: channels,
            freq_padding: Padding::Same,
            inputs,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    spec: LayerSpec,
    /// Indices into the parameter store (weight then bias, or gamma then beta).
    params: Vec<usize>,
}

/// Incrementally assembles a [`Network`]. Node ids are returned so callers can
/// wire skip connections.
pub struct GraphBuilder<T> {
    nodes: Vec<Node>,
    params: ParamStore<T>,
    rng: rand_chacha::ChaCha8Rng,
}

impl<T: Real> GraphBuilder<T> {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let input = Node {
            spec: LayerSpec::plain("input", LayerKind::Input, in_channels, vec![]),
            params: vec![],
        };
        Self {
            nodes: vec![input],
            params: ParamStore::new(seed),
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn channels(&self, id: usize) -> usize {
        self.nodes[id].spec.out_channels
    }

    fn push(&mut self, spec: LayerSpec, params: Vec<usize>) -> usize {
        self.nodes.push(Node { spec, params });
        self.nodes.len() - 1
    }

    /// He-uniform weights scaled by fan-in, zero bias.
    fn init_weights(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, bias_len: usize) -> Vec<usize> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let w: Vec<T> = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.gen_range(-limit..limit)))
            .collect();
        let wi = self.params.push(format!("{name}.weight"), shape, w);
        let bi = self
            .params
            .push(format!("{name}.bias"), vec![bias_len], vec![T::zero(); bias_len]);
        vec![wi, bi]
    }

    pub fn conv(
        &mut self,
        name: &str,
        input: usize,
        out_channels: usize,
        kernel: [usize; 2],
        freq_padding: Padding,
    ) -> usize {
        let cin = self.channels(input);
        let params = self.init_weights(
            name,
            vec![out_channels, cin, kernel[0], kernel[1]],
            cin * kernel[0] * kernel[1],
            out_channels,
        );
        let spec = LayerSpec {
            kernel,
            in_channels: cin,
            out_channels,
            freq_padding,
            ..LayerSpec::plain(name, LayerKind::Conv, cin, vec![input])
        };
        self.push(spec, params)
    }

    pub fn transposed_conv(
        &mut self,
        name: &str,
        input: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> usize {
        let cin = self.channels(input);
        let params = self.init_weights(
            name,
            vec![cin, out_channels, kernel],
            cin * kernel.div_ceil(stride),
            out_channels,
        );
        let spec = LayerSpec {
            kernel: [1, kernel],
            stride: [1, stride],
            in_channels: cin,
            out_channels,
            ..LayerSpec::plain(name, LayerKind::TransposedConv, cin, vec![input])
        };
        self.push(spec, params)
    }

    pub fn max_pool(&mut self, name: &str, input: usize, pool: [usize; 2]) -> usize {
        let c = self.channels(input);
        let spec = LayerSpec {
            kernel: pool,
            stride: pool,
            ..LayerSpec::plain(name, LayerKind::MaxPool, c, vec![input])
        };
        self.push(spec, vec![])
    }

    pub fn group_norm(&mut self, name: &str, input: usize, groups: usize) -> usize {
        let c = self.channels(input);
        let gi = self.params.push(format!("{name}.gamma"), vec![c], vec![T::one(); c]);
        let bi = self.params.push(format!("{name}.beta"), vec![c], vec![T::zero(); c]);
        let spec = LayerSpec {
            groups,
            ..LayerSpec::plain(name, LayerKind::GroupNorm, c, vec![input])
        };
        self.push(spec, vec![gi, bi])
    }

    pub fn relu(&mut self, name: &str, input: usize) -> usize {
        let c = self.channels(input);
        self.push(LayerSpec::plain(name, LayerKind::ReLU, c, vec![input]), vec![])
    }

    pub fn sigmoid(&mut self, name: &str, input: usize) -> usize {
        let c = self.channels(input);
        self.push(LayerSpec::plain(name, LayerKind::Sigmoid, c, vec![input]), vec![])
    }

    pub fn concat(&mut self, name: &str, a: usize, b: usize) -> usize {
        let (ca, cb) = (self.channels(a), self.channels(b));
        let spec = LayerSpec {
            in_channels: ca + cb,
            out_channels: ca + cb,
            ..LayerSpec::plain(name, LayerKind::Concat, ca, vec![a, b])
        };
        self.push(spec, vec![])
    }

    pub fn add(&mut self, name: &str, a: usize, b: usize) -> usize {
        let c = self.channels(a);
        self.push(LayerSpec::plain(name, LayerKind::Add, c, vec![a, b]), vec![])
    }

    /// The last pushed node becomes the output.
    pub fn finish(self, time_multiple: usize) -> Network<T> {
        Network {
            nodes: self.nodes,
            params: self.params,
            time_multiple: time_multiple.max(1),
        }
    }
}

/// Layer graph plus trainable parameters. The final node is the output.
#[derive(Debug, Clone)]
pub struct Network<T> {
    nodes: Vec<Node>,
    params: ParamStore<T>,
    time_multiple: usize,
}

#[derive(Debug, Clone)]
enum Aux<T> {
    None,
    Pool(Vec<u32>),
    Norm(GroupStats<T>),
}

/// Activations retained by [`Network::forward`] for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    outputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
    input_time: usize,
}

impl<T> ForwardCache<T> {
    pub fn empty() -> Self {
        Self {
            outputs: vec![],
            aux: vec![],
            input_time: 0,
        }
    }
}

impl<T: Real> Network<T> {
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.nodes.iter().map(|n| &n.spec)
    }

    pub fn in_channels(&self) -> usize {
        self.nodes[0].spec.out_channels
    }

    /// Inputs are zero-padded on the right to a multiple of this length.
    pub fn time_multiple(&self) -> usize {
        self.time_multiple
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            nodes: self.nodes.clone(),
            params: self.params.cast(),
            time_multiple: self.time_multiple,
        }
    }

    fn padded_time(&self, time: usize) -> usize {
        time.div_ceil(self.time_multiple) * self.time_multiple
    }

    /// Output has the input's time length; padding is internal.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        if input.channels() != self.in_channels() {
            return Err(NnError::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        if input.time() == 0 {
            return Err(NnError::ShapeMismatch("empty time axis".into()));
        }
        let padded = input.with_time(self.padded_time(input.time()));
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = &node.spec;
            let arg = |i: usize| &outputs[s.inputs[i]];
            let p = |i: usize| &self.params.get(node.params[i]).value[..];
            let (out, a) = match s.kind {
                LayerKind::Input => (padded.clone(), Aux::None),
                LayerKind::Conv => (
                    layers::conv_forward(arg(0), p(0), p(1), s.out_channels, s.kernel, s.freq_padding)?,
                    Aux::None,
                ),
                LayerKind::TransposedConv => (
                    layers::transposed_conv_forward(arg(0), p(0), p(1), s.out_channels, s.kernel[1], s.stride[1])?,
                    Aux::None,
                ),
                LayerKind::MaxPool => {
                    let (y, idx) = layers::max_pool_forward(arg(0), s.kernel)?;
                    (y, Aux::Pool(idx))
                }
                LayerKind::GroupNorm => {
                    let (y, st) = layers::group_norm_forward(arg(0), s.groups, p(0), p(1))?;
                    (y, Aux::Norm(st))
                }
                LayerKind::ReLU => (layers::relu_forward(arg(0)), Aux::None),
                LayerKind::Sigmoid => (layers::sigmoid_forward(arg(0)), Aux::None),
                LayerKind::Concat => (layers::concat_forward(arg(0), arg(1))?, Aux::None),
                LayerKind::Add => (layers::add_forward(arg(0), arg(1))?, Aux::None),
            };
            outputs.push(out);
            aux.push(a);
        }
        let result = outputs.last().expect("graph has nodes").with_time(input.time());
        Ok((
            result,
            ForwardCache {
                outputs,
                aux,
                input_time: input.time(),
            },
        ))
    }

    /// Inference without retaining a cache.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Back-propagates `upstream` (shaped like the forward output) and returns
    /// parameter gradients together with the input gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        upstream: &Tensor<T>,
    ) -> Result<(Gradients<T>, Tensor<T>), NnError> {
        if cache.outputs.len() != self.nodes.len() {
            return Err(NnError::MissingForwardCache);
        }
        let last = self.nodes.len() - 1;
        let out_shape = cache.outputs[last].shape();
        if upstream.channels() != out_shape[0] || upstream.freq() != out_shape[1] || upstream.time() != cache.input_time
        {
            return Err(NnError::ShapeMismatch(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                [out_shape[0], out_shape[1], cache.input_time]
            )));
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let mut node_grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        node_grads[last] = Some(upstream.with_time(out_shape[2]));

        let accumulate = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| match slot {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            None => *slot = Some(g),
        };

        for idx in (1..self.nodes.len()).rev() {
            let Some(gy) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let s = &node.spec;
            let x = |i: usize| &cache.outputs[s.inputs[i]];
            match s.kind {
                LayerKind::Input => unreachable!("input is node 0"),
                LayerKind::Conv => {
                    let (wi, bi) = (node.params[0], node.params[1]);
                    let w = &self.params.get(wi).value;
                    let (gw, gb) = grads.pair_mut(wi, bi);
                    let gx = layers::conv_backward(x(0), w, &gy, s.kernel, s.freq_padding, gw, gb);
                    accumulate(&mut node_grads[s.inputs[0]], gx);
                }
                LayerKind::TransposedConv => {
                    let (wi, bi) = (node.params[0], node.params[1]);
                    let w = &self.params.get(wi).value;
                    let (gw, gb) = grads.pair_mut(wi, bi);
                    let gx = layers::transposed_conv_backward(x(0), w, &gy, s.kernel[1], s.stride[1], gw, gb);
                    accumulate(&mut node_grads[s.inputs[0]], gx);
                }
                LayerKind::MaxPool => {
                    let Aux::Pool(arg) = &cache.aux[idx] else {
                        return Err(NnError::MissingForwardCache);
                    };
                    let gx = layers::max_pool_backward(x(0).shape(), arg, &gy);
                    accumulate(&mut node_grads[s.inputs[0]], gx);
                }
                LayerKind::GroupNorm => {
                    let Aux::Norm(stats) = &cache.aux[idx] else {
                        return Err(NnError::MissingForwardCache);
                    };
                    let (gi, bi) = (node.params[0], node.params[1]);
                    let gamma = &self.params.get(gi).value;
                    let (gg, gbeta) = grads.pair_mut(gi, bi);
                    let gx = layers::group_norm_backward(x(0), s.groups, gamma, stats, &gy, gg, gbeta);
                    accumulate(&mut node_grads[s.inputs[0]], gx);
                }
                LayerKind::ReLU => {
                    let gx = layers::relu_backward(x(0), &gy);
                    accumulate(&mut node_grads[s.inputs[0]], gx);
                }
                LayerKind::Sigmoid => {
                    let gx = layers::sigmoid_backward(&cache.outputs[idx], &gy);
                    accumulate(&mut node_grads[s.inputs[0]], gx);
                }
                LayerKind::Concat => {
                    let (ga, gb) = layers::concat_backward(x(0).channels(), &gy);
                    accumulate(&mut node_grads[s.inputs[0]], ga);
                    accumulate(&mut node_grads[s.inputs[1]], gb);
                }
                LayerKind::Add => {
                    accumulate(&mut node_grads[s.inputs[0]], gy.clone());
                    accumulate(&mut node_grads[s.inputs[1]], gy);
                }
            }
        }
        let input_grad = node_grads[0]
            .take()
            .unwrap_or_else(|| {
                let [c, f, t] = cache.outputs[0].shape();
                Tensor::zeros(c, f, t)
            })
            .with_time(cache.input_time);
        Ok((grads, input_grad))
    }
}
