//! Synthetic bridge passages.
//!
//! Every axle crossing a sensor starts a damped oscillation at the bridge's
//! fundamental frequency and adds a brief broadband click. Contributions of
//! all axles are summed and seeded Gaussian noise is added.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{save_dataset, AxleRecord, DataError, Dataset, Passage, SensorChannel};

/// Minimum spacing between consecutive axles in meters.
pub const MIN_AXLE_SPACING: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    /// Hz
    pub fundamental_frequency: f64,
    pub damping_ratio: f64,
    /// Meters from the bridge entry.
    pub sensor_positions: Vec<f64>,
    /// Meters.
    pub span: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            fundamental_frequency: 6.9,
            damping_ratio: 0.03,
            sensor_positions: vec![4.1, 8.2, 12.3],
            span: 16.4,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.fundamental_frequency > 0.0) {
            return Err(invalid("fundamental frequency must be positive"));
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 1.0) {
            return Err(invalid("damping ratio must lie in (0, 1)"));
        }
        if self.sensor_positions.is_empty() {
            return Err(invalid("at least one sensor is required"));
        }
        if self.sensor_positions.iter().any(|&p| !(0.0..=self.span).contains(&p)) {
            return Err(invalid("sensor positions must lie on the span"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Meters behind the first axle, strictly increasing from 0.
    pub axle_offsets: Vec<f64>,
    /// m/s
    pub speed: f64,
    pub load_scale: Vec<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.axle_offsets.is_empty() {
            return Err(invalid("train has no axles"));
        }
        if self.load_scale.len() != self.axle_offsets.len() {
            return Err(invalid("one load scale per axle is required"));
        }
        if !(self.speed > 0.0) {
            return Err(invalid("speed must be positive"));
        }
        if self.axle_offsets.windows(2).any(|w| w[1] - w[0] < MIN_AXLE_SPACING) {
            return Err(invalid(format!("axles closer than {MIN_AXLE_SPACING} m")));
        }
        if self.load_scale.iter().any(|&a| !(a > 0.0)) {
            return Err(invalid("load scales must be positive"));
        }
        Ok(())
    }

    /// Cars of four axles (two bogies); the last car keeps only the axles
    /// that remain. Geometry varies slightly with the generator.
    pub fn random(axle_count: usize, speed: f64, rng: &mut impl Rng) -> Self {
        let mut offsets = Vec::with_capacity(axle_count);
        let mut car_start = 0.0;
        while offsets.len() < axle_count {
            let wheelbase = rng.gen_range(2.2..3.0);
            let bogie_gap = rng.gen_range(12.0..18.0);
            let car_length = bogie_gap + wheelbase + rng.gen_range(5.0..8.0);
            for x in [0.0, wheelbase, bogie_gap, bogie_gap + wheelbase] {
                if offsets.len() < axle_count {
                    offsets.push(car_start + x);
                }
            }
            car_start += car_length;
        }
        let load_scale = (0..axle_count).map(|_| rng.gen_range(0.8..1.2)).collect();
        Self {
            axle_offsets: offsets,
            speed,
            load_scale,
        }
    }
}

/// Signal-level parameters shared by all passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Hz
    pub sample_rate: f64,
    /// Noise standard deviation relative to a unit axle response.
    pub noise_std: f64,
    /// Click amplitude relative to a unit axle response.
    pub click_amplitude: f64,
    /// Click carrier frequency in Hz.
    pub click_frequency: f64,
    /// Click envelope width in seconds.
    pub click_width: f64,
    /// Seconds recorded after the last crossing.
    pub tail: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate: 600.0,
            noise_std: 0.1,
            click_amplitude: 0.3,
            click_frequency: 60.0,
            click_width: 0.005,
            tail: 1.0,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.sample_rate > 0.0) || !(self.noise_std >= 0.0) || !(self.click_amplitude >= 0.0) {
            return Err(invalid("sample rate must be positive and amplitudes non-negative"));
        }
        if !(self.click_width > 0.0) || !(self.tail >= 0.0) {
            return Err(invalid("click width must be positive and tail non-negative"));
        }
        Ok(())
    }
}

/// Response of one axle at time `tau` seconds after it crosses the sensor.
fn axle_response(tau: f64, amplitude: f64, bridge: &BridgeConfig, sig: &SignalConfig) -> f64 {
    let mut v = 0.0;
    if tau >= 0.0 {
        let w = 2.0 * PI * bridge.fundamental_frequency;
        v += amplitude * (-bridge.damping_ratio * w * tau).exp() * (w * tau).sin();
    }
    if sig.click_amplitude > 0.0 {
        let z = tau / sig.click_width;
        if z.abs() < 8.0 {
            v += amplitude * sig.click_amplitude * (-0.5 * z * z).exp() * (2.0 * PI * sig.click_frequency * tau).cos();
        }
    }
    v
}

pub fn generate_passage(
    passage_id: &str,
    bridge: &BridgeConfig,
    train: &TrainConfig,
    sig: &SignalConfig,
    seed: u64,
) -> Result<Passage, SynthError> {
    bridge.validate()?;
    train.validate()?;
    sig.validate()?;
    let fs = sig.sample_rate;
    let crossing = |pos: f64, offset: f64| (pos + offset) / train.speed;
    let last = bridge
        .sensor_positions
        .iter()
        .map(|&p| crossing(p, *train.axle_offsets.last().expect("validated")))
        .fold(0.0, f64::max);
    let n = ((last + sig.tail) * fs).ceil() as usize + 1;
    let velocity = train.speed / fs;
    let noise = Normal::new(0.0, sig.noise_std).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut channels = Vec::new();
    let mut axles = Vec::new();
    // Support of a response; beyond it the damped term is below 1e-12.
    let w = 2.0 * PI * bridge.fundamental_frequency;
    let decay_len = (27.7 / (bridge.damping_ratio * w) * fs).ceil() as usize;
    let click_len = (8.0 * sig.click_width * fs).ceil() as usize + 1;
    for (si, &pos) in bridge.sensor_positions.iter().enumerate() {
        let mut samples = vec![0.0; n];
        let mut records = Vec::new();
        for (&offset, &amp) in train.axle_offsets.iter().zip(&train.load_scale) {
            let t0 = crossing(pos, offset);
            records.push(AxleRecord {
                crossing_time: t0,
                velocity,
            });
            let start = ((t0 * fs).floor() as usize).saturating_sub(click_len);
            let end = ((t0 * fs).ceil() as usize + decay_len.max(click_len)).min(n);
            for (i, s) in samples.iter_mut().enumerate().take(end).skip(start) {
                *s += axle_response(i as f64 / fs - t0, amp, bridge, sig);
            }
        }
        if sig.noise_std > 0.0 {
            for s in &mut samples {
                *s += noise.sample(&mut rng);
            }
        }
        channels.push(SensorChannel {
            sensor_id: format!("s{si}"),
            samples,
            sample_rate: fs,
        });
        axles.push(records);
    }
    Ok(Passage {
        passage_id: passage_id.to_string(),
        channels,
        axles,
        axle_count: train.axle_offsets.len(),
    })
}

/// Parameters of a whole synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_passages: usize,
    /// (axle count, relative weight)
    pub axle_distribution: Vec<(usize, f64)>,
    /// m/s
    pub speed_range: (f64, f64),
    /// Hz, sampled per passage.
    pub frequency_range: (f64, f64),
    pub bridge: BridgeConfig,
    pub signal: SignalConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_passages: 250,
            axle_distribution: vec![(8, 0.5), (16, 0.3), (32, 0.2)],
            speed_range: (20.0, 60.0),
            frequency_range: (5.0, 6.9),
            bridge: BridgeConfig::default(),
            signal: SignalConfig::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.axle_distribution.is_empty() {
            return Err(invalid("axle count distribution is empty"));
        }
        if self.axle_distribution.iter().any(|&(n, w)| n == 0 || !(w > 0.0)) {
            return Err(invalid("axle counts and weights must be positive"));
        }
        let (lo, hi) = self.speed_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid("speed range must be positive and ordered"));
        }
        let (flo, fhi) = self.frequency_range;
        if !(flo > 0.0 && flo <= fhi) {
            return Err(invalid("frequency range must be positive and ordered"));
        }
        self.bridge.validate()?;
        self.signal.validate()
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Passage `index` depends only on the dataset seed and its index.
pub fn generate_indexed(cfg: &DatasetConfig, index: usize) -> Result<Passage, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let total: f64 = cfg.axle_distribution.iter().map(|d| d.1).sum();
    let mut u = rng.gen_range(0.0..total);
    let mut axles = cfg.axle_distribution[cfg.axle_distribution.len() - 1].0;
    for &(n, w) in &cfg.axle_distribution {
        if u < w {
            axles = n;
            break;
        }
        u -= w;
    }
    let speed = uniform(&mut rng, cfg.speed_range);
    let train = TrainConfig::random(axles, speed, &mut rng);
    let bridge = BridgeConfig {
        fundamental_frequency: uniform(&mut rng, cfg.frequency_range),
        ..cfg.bridge.clone()
    };
    let noise_seed = rng.gen();
    generate_passage(&format!("p{index:05}"), &bridge, &train, &cfg.signal, noise_seed)
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let passages = (0..cfg.n_passages)
        .map(|i| generate_indexed(cfg, i))
        .collect::<Result<_, _>>()?;
    Ok(Dataset { passages })
}

/// Generates and writes a dataset in the canonical directory format.
pub fn write_dataset(cfg: &DatasetConfig, root: &Path) -> Result<BTreeMap<usize, usize>, SynthError> {
    let ds = generate_dataset(cfg)?;
    save_dataset(&ds, root)?;
    Ok(ds.axle_count_histogram())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, validate_passage};

    fn one_axle(pos: f64, speed: f64) -> (BridgeConfig, TrainConfig) {
        (
            BridgeConfig {
                sensor_positions: vec![pos],
                ..BridgeConfig::default()
            },
            TrainConfig {
                axle_offsets: vec![0.0],
                speed,
                load_scale: vec![1.0],
            },
        )
    }

    #[test]
    fn single_axle_without_noise_is_a_damped_sinusoid() {
        let (bridge, train) = one_axle(8.2, 41.0);
        let sig = SignalConfig {
            noise_std: 0.0,
            click_amplitude: 0.0,
            ..SignalConfig::default()
        };
        let p = generate_passage("x", &bridge, &train, &sig, 0).unwrap();
        let t0 = 8.2 / 41.0;
        let w = 2.0 * PI * 6.9;
        let x = &p.channels[0].samples;
        for (i, &v) in x.iter().enumerate() {
            let tau = i as f64 / 600.0 - t0;
            let expect = if tau < 0.0 {
                0.0
            } else {
                (-0.03 * w * tau).exp() * (w * tau).sin()
            };
            assert!((v - expect).abs() < 1e-12, "sample {i}");
        }
        // Zero before the crossing sample.
        assert!(x[..(t0 * 600.0).floor() as usize].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn click_is_confined_near_the_crossing() {
        let (bridge, train) = one_axle(8.2, 41.0);
        let quiet = SignalConfig {
            noise_std: 0.0,
            click_amplitude: 0.0,
            ..SignalConfig::default()
        };
        let loud = SignalConfig {
            noise_std: 0.0,
            ..SignalConfig::default()
        };
        let a = generate_passage("x", &bridge, &train, &quiet, 0).unwrap();
        let b = generate_passage("x", &bridge, &train, &loud, 0).unwrap();
        let c = (8.2 / 41.0 * 600.0) as usize;
        for i in 0..a.n_samples() {
            if i.abs_diff(c) > 30 {
                assert_eq!(a.channels[0].samples[i], b.channels[0].samples[i]);
            }
        }
    }

    #[test]
    fn labels_and_crossings() {
        let bridge = BridgeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train = TrainConfig::random(16, 33.0, &mut rng);
        let p = generate_passage("x", &bridge, &train, &SignalConfig::default(), 5).unwrap();
        assert!(validate_passage(&p).is_empty());
        for ch in 0..p.channels.len() {
            assert_eq!(p.label_vector(ch).unwrap().sum(), 16);
        }
        for a in 0..16 {
            let d = p.axles[2][a].crossing_time - p.axles[0][a].crossing_time;
            assert!((d - (12.3 - 4.1) / 33.0).abs() < 1e-12);
        }
        assert!((p.axles[0][0].velocity - 33.0 / 600.0).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_passage() {
        let bridge = BridgeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let train = TrainConfig::random(8, 25.0, &mut rng);
        let sig = SignalConfig::default();
        let a = generate_passage("x", &bridge, &train, &sig, 9).unwrap();
        let b = generate_passage("x", &bridge, &train, &sig, 9).unwrap();
        let c = generate_passage("x", &bridge, &train, &sig, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn energy_is_local_to_crossings() {
        let bridge = BridgeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig = SignalConfig {
            noise_std: 0.0,
            tail: 4.0,
            ..SignalConfig::default()
        };
        for speed in [20.0, 40.0, 60.0] {
            let train = TrainConfig::random(8, speed, &mut rng);
            let p = generate_passage("x", &bridge, &train, &sig, 0).unwrap();
            for (ch, recs) in p.channels.iter().zip(&p.axles) {
                let half = (0.25 * 600.0) as usize;
                let energy = |lo: usize| {
                    ch.samples[lo..(lo + 2 * half).min(ch.len())]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                };
                let crossings: Vec<usize> = recs
                    .iter()
                    .map(|a| (a.crossing_time * 600.0).round() as usize)
                    .collect();
                let far = (0..ch.len().saturating_sub(2 * half))
                    .filter(|&lo| {
                        crossings
                            .iter()
                            .all(|&c| (lo as f64 + half as f64 - c as f64).abs() >= 600.0 + half as f64)
                    })
                    .map(energy)
                    .fold(0.0, f64::max);
                for &c in &crossings {
                    assert!(energy(c.saturating_sub(half)) > far, "speed {speed}");
                }
            }
        }
    }

    #[test]
    fn histogram_matches_distribution() {
        let cfg = DatasetConfig {
            signal: SignalConfig {
                tail: 0.1,
                ..SignalConfig::default()
            },
            bridge: BridgeConfig {
                sensor_positions: vec![8.2],
                ..BridgeConfig::default()
            },
            ..DatasetConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let hist = ds.axle_count_histogram();
        let n = 250.0;
        for (count, p) in [(8usize, 0.5f64), (16, 0.3), (32, 0.2)] {
            let got = *hist.get(&count).unwrap_or(&0) as f64;
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((got - n * p).abs() <= 3.0 * sd, "{count}: {got}");
        }
    }

    #[test]
    fn dataset_round_trips_and_seeds_differ() {
        let cfg = DatasetConfig {
            n_passages: 4,
            seed: 11,
            ..DatasetConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&cfg, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, generate_dataset(&cfg).unwrap());
        let other = generate_dataset(&DatasetConfig {
            seed: 12,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(
            other.passages[0].channels[0].samples,
            back.passages[0].channels[0].samples
        );
    }

    #[test]
    fn invalid_configs() {
        let bad_train = TrainConfig {
            axle_offsets: vec![0.0, 1.5],
            speed: 30.0,
            load_scale: vec![1.0, 1.0],
        };
        assert!(generate_passage("x", &BridgeConfig::default(), &bad_train, &SignalConfig::default(), 0).is_err());
        let bad_bridge = BridgeConfig {
            damping_ratio: 1.5,
            ..BridgeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = TrainConfig::random(4, 30.0, &mut rng);
        assert!(generate_passage("x", &bad_bridge, &t, &SignalConfig::default(), 0).is_err());
        let empty = DatasetConfig {
            axle_distribution: vec![],
            ..DatasetConfig::default()
        };
        assert!(generate_dataset(&empty).is_err());
    }
}
