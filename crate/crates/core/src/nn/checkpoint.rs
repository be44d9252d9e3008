//! Checkpoints: a flat little-endian `f64` buffer plus a JSON manifest.
//!
//! The buffer holds, for every parameter in order, its values followed by the
//! Adam first and second moments. `f32` parameters widen losslessly, so a
//! save/load cycle is bit-exact at either precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, LayerKind, LayerSpec, Network};
use super::tensor::Real;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` elements of this parameter's values in the buffer.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<ParamEntry>,
    pub step: u64,
    pub seed: u64,
    pub time_multiple: usize,
    pub total_values: usize,
}

const FORMAT: &str = "vader-checkpoint-v1";

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

/// Serializes to `(bytes, manifest)` without touching the filesystem.
pub fn encode<T: Real>(net: &Network<T>) -> (Vec<u8>, CheckpointManifest) {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for p in net.params().iter() {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
        });
        for v in p.value.iter().chain(&p.m).chain(&p.v) {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        offset += 3 * p.value.len();
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        layers: net.layers().cloned().collect(),
        params: entries,
        step: net.params().step,
        seed: net.params().seed,
        time_multiple: net.time_multiple(),
        total_values: offset,
    };
    (bytes, manifest)
}

/// Rebuilds a network from a manifest and its value buffer.
pub fn decode<T: Real>(bytes: &[u8], manifest: &CheckpointManifest) -> Result<Network<T>, NnError> {
    if manifest.format != FORMAT {
        return Err(NnError::Checkpoint(format!("unknown format {}", manifest.format)));
    }
    if bytes.len() != manifest.total_values * 8 {
        return Err(NnError::Checkpoint(format!(
            "buffer has {} bytes, manifest expects {}",
            bytes.len(),
            manifest.total_values * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let first = manifest
        .layers
        .first()
        .filter(|l| l.kind == LayerKind::Input)
        .ok_or_else(|| NnError::Checkpoint("first layer must be the input".into()))?;
    let mut b = GraphBuilder::<T>::new(first.out_channels, manifest.seed);
    for (i, l) in manifest.layers.iter().enumerate().skip(1) {
        let input = |k: usize| -> Result<usize, NnError> {
            l.inputs
                .get(k)
                .copied()
                .filter(|&id| id < i)
                .ok_or_else(|| NnError::Checkpoint(format!("layer {} has a bad input list", l.name)))
        };
        match l.kind {
            LayerKind::Input => return Err(NnError::Checkpoint("duplicate input layer".into())),
            LayerKind::Conv => b.conv(&l.name, input(0)?, l.out_channels, l.kernel, l.freq_padding),
            LayerKind::TransposedConv => {
                b.transposed_conv(&l.name, input(0)?, l.out_channels, l.kernel[1], l.stride[1])
            }
            LayerKind::MaxPool => b.max_pool(&l.name, input(0)?, l.kernel),
            LayerKind::GroupNorm => b.group_norm(&l.name, input(0)?, l.groups),
            LayerKind::ReLU => b.relu(&l.name, input(0)?),
            LayerKind::Sigmoid => b.sigmoid(&l.name, input(0)?),
            LayerKind::Concat => b.concat(&l.name, input(0)?, input(1)?),
            LayerKind::Add => b.add(&l.name, input(0)?, input(1)?),
        };
    }
    let mut net = b.finish(manifest.time_multiple);
    if net.params().len() != manifest.params.len() {
        return Err(NnError::Checkpoint(format!(
            "topology implies {} parameters, manifest lists {}",
            net.params().len(),
            manifest.params.len()
        )));
    }
    for (p, entry) in net.params_mut().iter_mut().zip(&manifest.params) {
        let n = p.value.len();
        if p.shape != entry.shape || entry.offset + 3 * n > values.len() {
            return Err(NnError::Checkpoint(format!("parameter {} does not fit", entry.name)));
        }
        let src = &values[entry.offset..entry.offset + 3 * n];
        let cast = |xs: &[f64]| xs.iter().map(|&v| T::from_f64_lossy(v)).collect::<Vec<T>>();
        p.value = cast(&src[..n]);
        p.m = cast(&src[n..2 * n]);
        p.v = cast(&src[2 * n..]);
    }
    net.params_mut().step = manifest.step;
    Ok(net)
}

/// Writes `<base>.bin` and `<base>.json`.
pub fn save_checkpoint<T: Real>(net: &Network<T>, base: &Path) -> Result<(), NnError> {
    let (bytes, manifest) = encode(net);
    let (bin, json) = paths(base);
    if let Some(parent) = bin.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&bin, bytes)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    fs::write(&json, text)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(base: &Path) -> Result<Network<T>, NnError> {
    let (bin, json) = paths(base);
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(json)?).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    decode(&fs::read(bin)?, &manifest)
}
