//! The VADER U-Net, built from [`HyperParams`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cwt::{spectrogram_stack, SpectrogramStack, N_SCALES, N_TRANSFORMS};
use crate::mrf::{HyperParams, InputKind, MrfError};
use crate::nn::{
    load_checkpoint, save_checkpoint, GraphBuilder, LayerKind, LayerSpec, Network, NnError, Padding, Tensor,
};

/// Initial output probability.
pub const HEAD_PRIOR: f64 = 0.01;

pub const DEFAULT_WIDTH_CAP: usize = 256;
const CHANNELS_PER_GROUP: usize = 16;
/// Output probabilities are kept strictly inside (0, 1).
const OUTPUT_MARGIN: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model expects {expected} input, got {got}")]
    WrongInputKind { expected: InputKind, got: InputKind },
    #[error("model manifest: {0}")]
    Manifest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaderConfig {
    pub hyper: HyperParams,
    pub sample_rate: f64,
    pub width_cap: usize,
}

impl VaderConfig {
    pub fn new(hyper: HyperParams, sample_rate: f64) -> Self {
        Self {
            hyper,
            sample_rate,
            width_cap: DEFAULT_WIDTH_CAP,
        }
    }

    pub fn with_width_cap(mut self, cap: usize) -> Self {
        self.width_cap = cap;
        self
    }

    /// Channel width per level, level `p` being the bottleneck.
    pub fn widths(&self) -> Vec<usize> {
        (0..=self.hyper.pool_steps)
            .map(|l| (self.hyper.base_width << l).min(self.width_cap).max(1))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.hyper.check_structure()?;
        if !self.hyper.is_valid() {
            return Err(MrfError::InvalidHyperParams(format!(
                "kernel size {} must exceed pool size {}",
                self.hyper.kernel_size, self.hyper.pool_size
            ))
            .into());
        }
        if self.hyper.pool_steps == 0 || self.width_cap == 0 || !(self.sample_rate > 0.0) {
            return Err(MrfError::InvalidHyperParams(format!("{self:?}")).into());
        }
        self.hyper.mrf()?;
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self.hyper.input_kind {
            InputKind::Raw => 1,
            InputKind::Spectrogram => N_TRANSFORMS,
        }
    }

    pub fn in_freq(&self) -> usize {
        match self.hyper.input_kind {
            InputKind::Raw => 1,
            InputKind::Spectrogram => N_SCALES,
        }
    }

    pub fn time_multiple(&self) -> usize {
        self.hyper.pool_size.pow(self.hyper.pool_steps)
    }
}

fn groups_for(channels: usize) -> usize {
    let mut g = (channels / CHANNELS_PER_GROUP).max(1);
    while channels % g != 0 {
        g -= 1;
    }
    g
}

/// Wraps the builder and tracks the frequency extent of each node.
struct Assembler {
    b: GraphBuilder<f32>,
    freq: Vec<usize>,
    k: usize,
}

impl Assembler {
    fn track(&mut self, id: usize, f: usize) -> usize {
        if self.freq.len() <= id {
            self.freq.resize(id + 1, 0);
        }
        self.freq[id] = f;
        id
    }

    fn conv(&mut self, name: &str, x: usize, out: usize, kt: usize) -> usize {
        let f = self.freq[x];
        let id = self.b.conv(name, x, out, [self.k.min(f), kt], Padding::Same);
        self.track(id, f)
    }

    fn pointwise(&mut self, name: &str, x: usize, out: usize) -> usize {
        let f = self.freq[x];
        let id = self.b.conv(name, x, out, [1, 1], Padding::Same);
        self.track(id, f)
    }

    fn norm(&mut self, name: &str, x: usize) -> usize {
        let f = self.freq[x];
        let g = groups_for(self.b.channels(x));
        let id = self.b.group_norm(name, x, g);
        self.track(id, f)
    }

    fn relu(&mut self, name: &str, x: usize) -> usize {
        let f = self.freq[x];
        let id = self.b.relu(name, x);
        self.track(id, f)
    }

    /// conv, ReLU, GroupNorm
    fn conv_block(&mut self, name: &str, x: usize, out: usize) -> usize {
        let c = self.conv(&format!("{name}.conv"), x, out, self.k);
        let r = self.relu(&format!("{name}.relu"), c);
        self.norm(&format!("{name}.norm"), r)
    }

    /// Bottleneck residual block: 1x1 reduce, k conv, 1x1 expand.
    fn residual_block(&mut self, name: &str, x: usize, out: usize) -> usize {
        let inner = (out / 4).max(1);
        let a = self.pointwise(&format!("{name}.reduce"), x, inner);
        let a = self.norm(&format!("{name}.reduce_norm"), a);
        let a = self.relu(&format!("{name}.reduce_relu"), a);
        let a = self.conv(&format!("{name}.conv"), a, inner, self.k);
        let a = self.norm(&format!("{name}.conv_norm"), a);
        let a = self.relu(&format!("{name}.conv_relu"), a);
        let a = self.pointwise(&format!("{name}.expand"), a, out);
        let a = self.norm(&format!("{name}.expand_norm"), a);
        let shortcut = if self.b.channels(x) == out {
            x
        } else {
            let s = self.pointwise(&format!("{name}.project"), x, out);
            self.norm(&format!("{name}.project_norm"), s)
        };
        let f = self.freq[x];
        let sum = self.b.add(&format!("{name}.add"), a, shortcut);
        self.track(sum, f);
        self.relu(&format!("{name}.out"), sum)
    }

    fn pool(&mut self, name: &str, x: usize, pool: [usize; 2]) -> usize {
        let f = self.freq[x];
        let id = self.b.max_pool(name, x, pool);
        self.track(id, f.div_ceil(pool[0]))
    }

    /// Max over the remaining frequency bins, if any.
    fn collapse_freq(&mut self, name: &str, x: usize) -> usize {
        let f = self.freq[x];
        if f == 1 {
            return x;
        }
        self.pool(name, x, [f, 1])
    }
}

/// Builds the network with seeded initial weights.
pub fn build_vader(cfg: &VaderConfig, seed: u64) -> Result<Network<f32>, ModelError> {
    cfg.validate()?;
    let HyperParams {
        kernel_size: k,
        pool_size: m,
        pool_steps: p,
        ..
    } = cfg.hyper;
    let widths = cfg.widths();
    let mut a = Assembler {
        b: GraphBuilder::new(cfg.in_channels(), seed),
        freq: vec![cfg.in_freq()],
        k,
    };

    let x = a.b.group_norm("input_norm", 0, 1);
    a.track(x, cfg.in_freq());
    let mut x = a.conv_block("enc_in", x, widths[0]);
    let mut skips = Vec::new();
    for l in 0..p as usize {
        let r = a.residual_block(&format!("enc{l}"), x, widths[l]);
        skips.push(r);
        let fp = m.min(a.freq[r]);
        x = a.pool(&format!("enc{l}.pool"), r, [fp, m]);
    }
    x = a.residual_block("bottleneck", x, widths[p as usize]);
    x = a.collapse_freq("bottleneck.collapse", x);

    for l in (0..p as usize).rev() {
        let up = a.b.transposed_conv(&format!("dec{l}.up"), x, widths[l], k, m);
        a.track(up, 1);
        let skip = a.collapse_freq(&format!("dec{l}.skip_collapse"), skips[l]);
        let cat = a.b.concat(&format!("dec{l}.concat"), up, skip);
        a.track(cat, 1);
        x = a.conv_block(&format!("dec{l}"), cat, widths[l]);
    }
    let head = a.pointwise("head", x, 1);
    let out = a.b.sigmoid("head.sigmoid", head);
    a.track(out, 1);
    let mut net = a.b.finish(cfg.time_multiple());
    // start near the axle prior instead of 0.5 everywhere
    let bias = -((1.0 - HEAD_PRIOR) / HEAD_PRIOR).ln();
    for param in net.params_mut().iter_mut().filter(|q| q.name == "head.bias") {
        param.value.fill(bias as f32);
    }
    Ok(net)
}

/// Largest time footprint of any convolution kernel, measured in input
/// samples: kernel extent times the cumulative pooling stride at its input.
pub fn walk_mrf<'a>(layers: impl IntoIterator<Item = &'a LayerSpec>) -> Result<u64, ModelError> {
    // jump as a rational num/den so upsampling stays exact
    let mut jump: Vec<(u64, u64)> = Vec::new();
    let mut best = 0u64;
    for l in layers {
        let input = |i: usize| -> Result<(u64, u64), ModelError> {
            l.inputs
                .get(i)
                .and_then(|&id| jump.get(id).copied())
                .ok_or_else(|| ModelError::Manifest(format!("layer {} refers to an unknown input", l.name)))
        };
        let j = match l.kind {
            LayerKind::Input => (1, 1),
            LayerKind::MaxPool => {
                let (n, d) = input(0)?;
                (n * l.stride[1] as u64, d)
            }
            LayerKind::TransposedConv => {
                let (n, d) = input(0)?;
                (n, d * l.stride[1] as u64)
            }
            LayerKind::Conv => {
                let (n, d) = input(0)?;
                best = best.max(l.kernel[1] as u64 * n / d);
                (n, d)
            }
            LayerKind::Concat | LayerKind::Add => {
                let (a, b) = (input(0)?, input(1)?);
                if a.0 * b.1 != b.0 * a.1 {
                    return Err(ModelError::Manifest(format!(
                        "layer {} joins different resolutions",
                        l.name
                    )));
                }
                a
            }
            _ => input(0)?,
        };
        let g = gcd(j.0, j.1);
        jump.push((j.0 / g, j.1 / g));
    }
    Ok(best)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Written beside checkpoints as `<base>.model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: VaderConfig,
    pub mrf: u64,
    pub walked_mrf: u64,
    pub parameter_count: usize,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// A built network together with its configuration.
#[derive(Debug, Clone)]
pub struct Vader {
    pub config: VaderConfig,
    pub network: Network<f32>,
}

impl Vader {
    pub fn new(config: VaderConfig, seed: u64) -> Result<Self, ModelError> {
        let network = build_vader(&config, seed)?;
        Ok(Self { config, network })
    }

    pub fn mrf(&self) -> u64 {
        self.config.hyper.mrf().expect("validated at build")
    }

    pub fn walked_mrf(&self) -> u64 {
        walk_mrf(self.network.layers()).expect("builder emits a consistent graph")
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            config: self.config,
            mrf: self.mrf(),
            walked_mrf: self.walked_mrf(),
            parameter_count: self.network.parameter_count(),
            widths: self.config.widths(),
            layers: self.network.layers().cloned().collect(),
        }
    }

    /// Network input for one acceleration series.
    pub fn input_tensor(&self, samples: &[f64]) -> Tensor<f32> {
        match self.config.hyper.input_kind {
            InputKind::Raw => raw_tensor(samples),
            InputKind::Spectrogram => spectrogram_stack(samples).to_tensor(),
        }
    }

    /// Crossing probabilities, one per input sample.
    pub fn infer(&self, samples: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.infer_tensor(&self.input_tensor(samples))
    }

    pub fn infer_raw(&self, samples: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.expect_kind(InputKind::Raw)?;
        self.infer_tensor(&raw_tensor(samples))
    }

    pub fn infer_spectrogram(&self, stack: &SpectrogramStack) -> Result<Vec<f64>, ModelError> {
        self.expect_kind(InputKind::Spectrogram)?;
        self.infer_tensor(&stack.to_tensor())
    }

    pub fn infer_tensor(&self, input: &Tensor<f32>) -> Result<Vec<f64>, ModelError> {
        let y = self.network.predict(input)?;
        Ok(y.data()
            .iter()
            .map(|&v| (v as f64).clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN))
            .collect())
    }

    fn expect_kind(&self, got: InputKind) -> Result<(), ModelError> {
        let expected = self.config.hyper.input_kind;
        if expected != got {
            return Err(ModelError::WrongInputKind { expected, got });
        }
        Ok(())
    }

    pub fn manifest_path(base: &Path) -> PathBuf {
        base.with_extension("model.json")
    }

    /// Writes the checkpoint pair and the model manifest.
    pub fn save(&self, base: &Path) -> Result<(), ModelError> {
        save_checkpoint(&self.network, base)?;
        let text = serde_json::to_string_pretty(&self.manifest()).map_err(|e| ModelError::Manifest(e.to_string()))?;
        std::fs::write(Self::manifest_path(base), text)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(Self::manifest_path(base))?;
        let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| ModelError::Manifest(e.to_string()))?;
        manifest.config.validate()?;
        let network = load_checkpoint(base)?;
        let expect = build_vader(&manifest.config, 0)?;
        if expect.layers().ne(network.layers()) {
            return Err(ModelError::Manifest(
                "checkpoint topology differs from the configuration".into(),
            ));
        }
        Ok(Self {
            config: manifest.config,
            network,
        })
    }
}

pub fn raw_tensor(samples: &[f64]) -> Tensor<f32> {
    let v: Vec<f32> = samples.iter().map(|&x| x as f32).collect();
    Tensor::from_series(&v)
}
