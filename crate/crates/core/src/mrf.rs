//! Maximum receptive field (MRF) arithmetic and hyperparameter grid planning.
//!
//! The MRF of a U-Net with kernel size `k`, max pooling size `m` and `p`
//! pooling steps is `k * m^p` samples: the span one kernel covers at the
//! deepest resolution, measured in input samples. The object size of a signal
//! component with lowest frequency `f_l` sampled at `f_s` is `ceil(f_s / f_l)`.
//! A configuration is expected to underfit when its MRF is smaller than the
//! object size of the lowest frequency that must be resolved.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MrfError {
    #[error("receptive field k={k} m={m} p={p} overflows")]
    Overflow { k: u64, m: u64, p: u32 },
    #[error("frequencies must satisfy 0 < f_l <= f_s (got f_s={fs}, f_l={fl})")]
    NonPositiveFrequency { fs: f64, fl: f64 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputKind {
    Raw,
    Spectrogram,
}

impl std::fmt::Display for InputKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputKind::Raw => "raw",
            InputKind::Spectrogram => "spectrogram",
        })
    }
}

impl std::str::FromStr for InputKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(InputKind::Raw),
            "spectrogram" | "spec" => Ok(InputKind::Spectrogram),
            other => Err(format!("unknown input kind {other:?}")),
        }
    }
}

/// One VADER configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperParams {
    pub input_kind: InputKind,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub pool_steps: u32,
    pub base_width: usize,
}

impl HyperParams {
    pub fn raw(kernel_size: usize, pool_size: usize, pool_steps: u32) -> Self {
        Self {
            input_kind: InputKind::Raw,
            kernel_size,
            pool_size,
            pool_steps,
            base_width: 16,
        }
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    /// Checks the structural invariants (`k >= 1`, `m >= 2`, `base_width >= 1`).
    pub fn check_structure(&self) -> Result<(), MrfError> {
        if self.kernel_size < 1 || self.pool_size < 2 || self.base_width < 1 {
            return Err(MrfError::InvalidHyperParams(format!(
                "need k >= 1, m >= 2, base_width >= 1 (got k={}, m={}, base_width={})",
                self.kernel_size, self.pool_size, self.base_width
            )));
        }
        Ok(())
    }

    /// A kernel no larger than the pooling size cannot interpolate in the
    /// transposed-convolution upsampling path.
    pub fn is_valid(&self) -> bool {
        self.check_structure().is_ok() && self.kernel_size > self.pool_size
    }

    pub fn mrf(&self) -> Result<u64, MrfError> {
        mrf(self.kernel_size as u64, self.pool_size as u64, self.pool_steps)
    }
}

/// `k * m^p` in exact integer arithmetic.
pub fn mrf(k: u64, m: u64, p: u32) -> Result<u64, MrfError> {
    m.checked_pow(p)
        .and_then(|mp| mp.checked_mul(k))
        .ok_or(MrfError::Overflow { k, m, p })
}

/// `ceil(f_s / f_l)` samples.
pub fn object_size(fs: f64, fl: f64) -> Result<u64, MrfError> {
    if !(fs > 0.0 && fl > 0.0 && fl <= fs && fs.is_finite()) {
        return Err(MrfError::NonPositiveFrequency { fs, fl });
    }
    Ok((fs / fl).ceil() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSizeSpec {
    pub sample_rate: f64,
    pub lowest_frequency: f64,
    pub object_size: u64,
}

impl ObjectSizeSpec {
    pub fn new(sample_rate: f64, lowest_frequency: f64) -> Result<Self, MrfError> {
        Ok(Self {
            sample_rate,
            lowest_frequency,
            object_size: object_size(sample_rate, lowest_frequency)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MrfClass {
    Underfit,
    Ok,
    BeyondUseful,
    Invalid,
}

impl std::fmt::Display for MrfClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MrfClass::Underfit => "underfit",
            MrfClass::Ok => "ok",
            MrfClass::BeyondUseful => "beyond_useful",
            MrfClass::Invalid => "invalid",
        })
    }
}

/// Lowest frequency (Hz) whose content the wavelet transform folds into
/// single spectrogram samples.
pub const SPECTROGRAM_ENCODED_FREQUENCY: f64 = 3.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub hyper: HyperParams,
    pub mrf: u64,
    /// Spectrogram inputs encode low frequencies per sample; this reports the
    /// larger of the network MRF and that encoded span. Raw inputs repeat `mrf`.
    pub effective_mrf: u64,
    pub classification: MrfClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub kernel_sizes: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub pool_steps: Vec<u32>,
    pub input_kinds: Vec<InputKind>,
    pub base_width: usize,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![3, 5, 7, 9, 11, 13, 15, 17],
            pool_sizes: vec![2, 3, 4, 5],
            pool_steps: vec![3, 4],
            input_kinds: vec![InputKind::Raw, InputKind::Spectrogram],
            base_width: 16,
        }
    }
}

/// Thresholds for classifying a grid: the object size that must be captured
/// and the one beyond which no further gain is expected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanThresholds {
    pub sample_rate: f64,
    pub f_low_certain: f64,
    pub f_low_useful: f64,
}

impl Default for PlanThresholds {
    fn default() -> Self {
        Self {
            sample_rate: 600.0,
            f_low_certain: 5.0,
            f_low_useful: 1.0,
        }
    }
}

pub fn classify(hyper: &HyperParams, mrf: u64, min_size: u64, max_size: u64) -> MrfClass {
    if !hyper.is_valid() {
        MrfClass::Invalid
    } else if mrf < min_size {
        MrfClass::Underfit
    } else if mrf > max_size {
        MrfClass::BeyondUseful
    } else {
        MrfClass::Ok
    }
}

/// Cartesian product of the axes, each entry classified by the MRF rule.
/// Entries whose MRF overflows are classified `Invalid` with `mrf = u64::MAX`.
pub fn plan_grid(axes: &GridAxes, thresholds: &PlanThresholds) -> Result<Vec<PlanEntry>, MrfError> {
    let fs = thresholds.sample_rate;
    if thresholds.f_low_useful > thresholds.f_low_certain {
        return Err(MrfError::InvalidHyperParams(format!(
            "f_low_useful {} exceeds f_low_certain {}",
            thresholds.f_low_useful, thresholds.f_low_certain
        )));
    }
    let min_size = object_size(fs, thresholds.f_low_certain)?;
    let max_size = object_size(fs, thresholds.f_low_useful)?;
    let spec_bonus = object_size(fs, SPECTROGRAM_ENCODED_FREQUENCY.min(fs)).unwrap_or(0);
    let mut out = Vec::new();
    for &input_kind in &axes.input_kinds {
        for &p in &axes.pool_steps {
            for &m in &axes.pool_sizes {
                for &k in &axes.kernel_sizes {
                    let hyper = HyperParams {
                        input_kind,
                        kernel_size: k,
                        pool_size: m,
                        pool_steps: p,
                        base_width: axes.base_width,
                    };
                    let (mrf, class) = match hyper.mrf() {
                        Ok(v) => (v, classify(&hyper, v, min_size, max_size)),
                        Err(_) => (u64::MAX, MrfClass::Invalid),
                    };
                    let effective_mrf = match input_kind {
                        InputKind::Raw => mrf,
                        InputKind::Spectrogram => mrf.max(spec_bonus),
                    };
                    out.push(PlanEntry {
                        hyper,
                        mrf,
                        effective_mrf,
                        classification: class,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// CSV with columns `k,m,p,input_kind,mrf,effective_mrf,class`.
pub fn plan_to_csv(entries: &[PlanEntry]) -> String {
    let mut s = String::from("k,m,p,input_kind,mrf,effective_mrf,class\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.hyper.kernel_size,
            e.hyper.pool_size,
            e.hyper.pool_steps,
            e.hyper.input_kind,
            e.mrf,
            e.effective_mrf,
            e.classification
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub thresholds: PlanThresholds,
    pub min_object_size: u64,
    pub max_useful_size: u64,
    pub total: usize,
    pub underfit: usize,
    pub ok: usize,
    pub beyond_useful: usize,
    pub invalid: usize,
}

pub fn summarize(entries: &[PlanEntry], thresholds: &PlanThresholds) -> Result<PlanSummary, MrfError> {
    let count = |c: MrfClass| entries.iter().filter(|e| e.classification == c).count();
    Ok(PlanSummary {
        thresholds: *thresholds,
        min_object_size: object_size(thresholds.sample_rate, thresholds.f_low_certain)?,
        max_useful_size: object_size(thresholds.sample_rate, thresholds.f_low_useful)?,
        total: entries.len(),
        underfit: count(MrfClass::Underfit),
        ok: count(MrfClass::Ok),
        beyond_useful: count(MrfClass::BeyondUseful),
        invalid: count(MrfClass::Invalid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reported_receptive_fields() {
        assert_eq!(mrf(9, 2, 4), Ok(144));
        assert_eq!(mrf(9, 3, 4), Ok(729));
        assert_eq!(mrf(7, 5, 0), Ok(7));
    }

    #[test]
    fn overflow_is_reported() {
        assert!(matches!(mrf(3, 10, 30), Err(MrfError::Overflow { .. })));
    }

    #[test]
    fn object_sizes() {
        assert_eq!(object_size(600.0, 6.9), Ok(87));
        assert_eq!(object_size(600.0, 5.0), Ok(120));
        assert_eq!(object_size(600.0, 600.0), Ok(1));
        assert!(object_size(600.0, 0.0).is_err());
        assert!(object_size(600.0, 700.0).is_err());
    }

    fn entry_for(entries: &[PlanEntry], k: usize, m: usize, p: u32) -> &PlanEntry {
        entries
            .iter()
            .find(|e| {
                e.hyper.input_kind == InputKind::Raw
                    && e.hyper.kernel_size == k
                    && e.hyper.pool_size == m
                    && e.hyper.pool_steps == p
            })
            .unwrap()
    }

    #[test]
    fn classification_examples() {
        let axes = GridAxes {
            kernel_sizes: vec![3, 9],
            pool_sizes: vec![2, 4],
            pool_steps: vec![3, 4],
            ..GridAxes::default()
        };
        let entries = plan_grid(&axes, &PlanThresholds::default()).unwrap();
        assert_eq!(entry_for(&entries, 9, 2, 4).classification, MrfClass::Ok);
        let under = entry_for(&entries, 3, 2, 4);
        assert_eq!(under.mrf, 48);
        assert_eq!(under.classification, MrfClass::Underfit);
        assert_eq!(entry_for(&entries, 3, 4, 3).classification, MrfClass::Invalid);
        assert_eq!(entries.len(), 2 * 2 * 2 * 2);
    }

    #[test]
    fn default_grid_has_128_entries_and_spectrogram_bonus() {
        let t = PlanThresholds::default();
        let entries = plan_grid(&GridAxes::default(), &t).unwrap();
        assert_eq!(entries.len(), 8 * 4 * 2 * 2);
        let spec = entries
            .iter()
            .find(|e| e.hyper.input_kind == InputKind::Spectrogram && e.mrf < 177)
            .unwrap();
        assert_eq!(spec.effective_mrf, 177);
        let s = summarize(&entries, &t).unwrap();
        assert_eq!(s.underfit + s.ok + s.beyond_useful + s.invalid, s.total);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let entries = plan_grid(&GridAxes::default(), &PlanThresholds::default()).unwrap();
        let csv = plan_to_csv(&entries);
        assert!(csv.starts_with("k,m,p,input_kind,mrf,effective_mrf,class\n"));
        assert!(csv.contains("\n9,2,4,raw,144,144,ok\n"));
        assert_eq!(csv.lines().count(), entries.len() + 1);
    }

    proptest! {
        #[test]
        fn mrf_is_strictly_monotone(k in 1u64..40, m in 2u64..8, p in 1u32..6) {
            let base = mrf(k, m, p).unwrap();
            prop_assert!(mrf(k + 1, m, p).unwrap() > base);
            prop_assert!(mrf(k, m + 1, p).unwrap() > base);
            prop_assert!(mrf(k, m, p + 1).unwrap() > base);
        }

        #[test]
        fn object_size_ceiling(fs in 1.0f64..5000.0, frac in 0.001f64..1.0) {
            let fl = fs * frac;
            let y = object_size(fs, fl).unwrap();
            prop_assert!(y >= 1);
            prop_assert!(y as f64 * fl >= fs * (1.0 - 1e-12));
        }

        #[test]
        fn classification_is_total(k in 1usize..20, m in 2usize..6, p in 0u32..6) {
            let h = HyperParams::raw(k, m, p);
            let v = h.mrf().unwrap();
            let c = classify(&h, v, 87, 600);
            let expected = if k <= m { MrfClass::Invalid }
                else if v < 87 { MrfClass::Underfit }
                else if v > 600 { MrfClass::BeyondUseful }
                else { MrfClass::Ok };
            prop_assert_eq!(c, expected);
        }
    }
}
