//! Passages, label vectors, and the on-disk dataset format.
//!
//! A dataset directory holds one subdirectory per passage:
//!
//! ```text
//! <root>/<passage_id>/meta.json
//! <root>/<passage_id>/sensor_<id>.csv   one sample per line, no header
//! ```
//!
//! `meta.json` carries the passage id, sample rate, axle count, per-axle
//! velocities in meters per sample and per-sensor crossing times in seconds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("crossing at {crossing} s lies outside a {duration} s signal")]
    OutOfRangeCrossing { crossing: f64, duration: f64 },
    #[error("two crossings map to sample index {index}")]
    DuplicateSampleIndex { index: usize },
    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(f64),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("passage {passage}: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation {
        passage: String,
        violations: Vec<Violation>,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorChannel {
    pub sensor_id: String,
    pub samples: Vec<f64>,
    /// Hz.
    pub sample_rate: f64,
}

impl SensorChannel {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxleRecord {
    /// Seconds from the start of the channel.
    pub crossing_time: f64,
    /// Meters per sample.
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub passage_id: String,
    pub channels: Vec<SensorChannel>,
    /// One axle list per channel, in channel order.
    pub axles: Vec<Vec<AxleRecord>>,
    pub axle_count: usize,
}

impl Passage {
    pub fn sample_rate(&self) -> f64 {
        self.channels.first().map_or(0.0, |c| c.sample_rate)
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn label_vector(&self, channel: usize) -> Result<LabelVector, DataError> {
        let ch = &self.channels[channel];
        let crossings: Vec<f64> = self.axles[channel].iter().map(|a| a.crossing_time).collect();
        build_label_vector(&crossings, ch.sample_rate, ch.len())
    }

    /// Label sample indices (ascending) with their velocities for one channel.
    pub fn label_indices(&self, channel: usize) -> Result<(Vec<usize>, Vec<f64>), DataError> {
        let ch = &self.channels[channel];
        let mut pairs: Vec<(usize, f64)> = self.axles[channel]
            .iter()
            .map(|a| Ok((crossing_index(a.crossing_time, ch.sample_rate, ch.len())?, a.velocity)))
            .collect::<Result<_, DataError>>()?;
        pairs.sort_by_key(|p| p.0);
        Ok(pairs.into_iter().unzip())
    }
}

/// Binary per-sample label: one at each axle crossing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub bits: Vec<u8>,
}

impl LabelVector {
    pub fn sum(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Nearest sample (half away from zero) of a crossing time. A crossing in the
/// last half-sample of the signal maps to the final sample.
pub fn crossing_index(crossing: f64, sample_rate: f64, n_samples: usize) -> Result<usize, DataError> {
    if !(sample_rate > 0.0) {
        return Err(DataError::BadSampleRate(sample_rate));
    }
    let duration = n_samples as f64 / sample_rate;
    if !(crossing >= 0.0 && crossing < duration) {
        return Err(DataError::OutOfRangeCrossing { crossing, duration });
    }
    Ok(((crossing * sample_rate).round() as usize).min(n_samples - 1))
}

pub fn build_label_vector(crossings: &[f64], sample_rate: f64, n_samples: usize) -> Result<LabelVector, DataError> {
    let mut bits = vec![0u8; n_samples];
    for &c in crossings {
        let i = crossing_index(c, sample_rate, n_samples)?;
        if bits[i] == 1 {
            return Err(DataError::DuplicateSampleIndex { index: i });
        }
        bits[i] = 1;
    }
    Ok(LabelVector { bits })
}

/// A violated passage invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

pub fn validate_passage(p: &Passage) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |invariant: &'static str, detail: String| out.push(Violation { invariant, detail });
    if p.channels.is_empty() {
        push("channels", "passage has no channels".into());
        return out;
    }
    let first = &p.channels[0];
    for ch in &p.channels {
        if ch.samples.is_empty() {
            push("n_s >= 1", format!("channel {} is empty", ch.sensor_id));
        }
        if !(ch.sample_rate > 0.0 && ch.sample_rate.is_finite()) {
            push(
                "sample_rate > 0",
                format!("channel {} has rate {}", ch.sensor_id, ch.sample_rate),
            );
        }
        if let Some(i) = ch.samples.iter().position(|v| !v.is_finite()) {
            push(
                "finite samples",
                format!("channel {} sample {} is {}", ch.sensor_id, i, ch.samples[i]),
            );
        }
    }
    for ch in &p.channels[1..] {
        if ch.len() != first.len() {
            push(
                "equal channel lengths",
                format!(
                    "{} has {} samples, {} has {}",
                    first.sensor_id,
                    first.len(),
                    ch.sensor_id,
                    ch.len()
                ),
            );
        }
        if ch.sample_rate != first.sample_rate {
            push(
                "equal sample rates",
                format!(
                    "{} at {} Hz, {} at {} Hz",
                    first.sensor_id, first.sample_rate, ch.sensor_id, ch.sample_rate
                ),
            );
        }
    }
    if p.axles.len() != p.channels.len() {
        push(
            "axles per channel",
            format!("{} axle lists for {} channels", p.axles.len(), p.channels.len()),
        );
        return out;
    }
    for (ch, axles) in p.channels.iter().zip(&p.axles) {
        if axles.len() != p.axle_count {
            push(
                "axle_count",
                format!(
                    "channel {} has {} axles, passage declares {}",
                    ch.sensor_id,
                    axles.len(),
                    p.axle_count
                ),
            );
            continue;
        }
        for a in axles {
            if !(a.velocity > 0.0) {
                push(
                    "velocity > 0",
                    format!("channel {} axle velocity {}", ch.sensor_id, a.velocity),
                );
            }
        }
        if ch.samples.is_empty() || !(ch.sample_rate > 0.0) {
            continue;
        }
        let crossings: Vec<f64> = axles.iter().map(|a| a.crossing_time).collect();
        match build_label_vector(&crossings, ch.sample_rate, ch.len()) {
            Ok(lv) if lv.sum() != p.axle_count => push(
                "label sum == axle_count",
                format!(
                    "channel {} label sum {} vs axle_count {}",
                    ch.sensor_id,
                    lv.sum(),
                    p.axle_count
                ),
            ),
            Ok(_) => {}
            Err(e) => push("label construction", format!("channel {}: {e}", ch.sensor_id)),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub passages: Vec<Passage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn axle_count_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for p in &self.passages {
            *h.entry(p.axle_count).or_insert(0) += 1;
        }
        h
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.passage_id == id)
    }

    /// Passages whose ids are in `ids`, in `ids` order. Unknown ids are skipped.
    pub fn select(&self, ids: &[String]) -> Vec<&Passage> {
        let index: BTreeMap<&str, &Passage> = self.passages.iter().map(|p| (p.passage_id.as_str(), p)).collect();
        ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SensorMeta {
    id: String,
    crossings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PassageMeta {
    passage_id: String,
    sample_rate: f64,
    axle_count: usize,
    /// Per-axle velocity in meters per sample.
    velocities: Vec<f64>,
    sensors: Vec<SensorMeta>,
}

pub fn save_passage(p: &Passage, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let velocities = p
        .axles
        .first()
        .map(|a| a.iter().map(|r| r.velocity).collect())
        .unwrap_or_default();
    let meta = PassageMeta {
        passage_id: p.passage_id.clone(),
        sample_rate: p.sample_rate(),
        axle_count: p.axle_count,
        velocities,
        sensors: p
            .channels
            .iter()
            .zip(&p.axles)
            .map(|(c, a)| SensorMeta {
                id: c.sensor_id.clone(),
                crossings: a.iter().map(|r| r.crossing_time).collect(),
            })
            .collect(),
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text + "\n").map_err(io_err(&meta_path))?;
    for c in &p.channels {
        let path = dir.join(format!("sensor_{}.csv", c.sensor_id));
        let mut s = String::with_capacity(c.samples.len() * 12);
        for v in &c.samples {
            writeln!(s, "{v}").expect("write to string");
        }
        fs::write(&path, s).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    for p in &ds.passages {
        save_passage(p, &root.join(&p.passage_id))?;
    }
    Ok(())
}

fn parse_series(path: &Path) -> Result<Vec<f64>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| DataError::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                message: format!("{e}: {l:?}"),
            })
        })
        .collect()
}

/// Reads and validates one passage directory.
pub fn load_passage(dir: &Path) -> Result<Passage, DataError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: PassageMeta = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        file: meta_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut channels = Vec::with_capacity(meta.sensors.len());
    let mut axles = Vec::with_capacity(meta.sensors.len());
    for s in &meta.sensors {
        let samples = parse_series(&dir.join(format!("sensor_{}.csv", s.id)))?;
        if s.crossings.len() != meta.velocities.len() {
            return Err(DataError::Parse {
                file: meta_path.clone(),
                line: 0,
                message: format!(
                    "sensor {} lists {} crossings for {} velocities",
                    s.id,
                    s.crossings.len(),
                    meta.velocities.len()
                ),
            });
        }
        channels.push(SensorChannel {
            sensor_id: s.id.clone(),
            samples,
            sample_rate: meta.sample_rate,
        });
        axles.push(
            s.crossings
                .iter()
                .zip(&meta.velocities)
                .map(|(&crossing_time, &velocity)| AxleRecord {
                    crossing_time,
                    velocity,
                })
                .collect(),
        );
    }
    let p = Passage {
        passage_id: meta.passage_id,
        channels,
        axles,
        axle_count: meta.axle_count,
    };
    let violations = validate_passage(&p);
    if !violations.is_empty() {
        return Err(DataError::Validation {
            passage: p.passage_id.clone(),
            violations,
        });
    }
    Ok(p)
}

/// Loads every passage directory under `root`, sorted by directory name.
pub fn load_dataset(root: &Path) -> Result<Dataset, DataError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    let passages = dirs.iter().map(|d| load_passage(d)).collect::<Result<_, _>>()?;
    Ok(Dataset { passages })
}
