//! Continuous wavelet transform and the six-transform spectrogram stack.
//!
//! Each row is the signal convolved with a sampled, dilated mother wavelet
//! `psi(t / s) / sqrt(s)` at integer offsets, with symmetric boundary
//! extension so the output keeps the input length. Complex wavelets are
//! reduced to their modulus.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

pub const N_SCALES: usize = 16;
pub const N_TRANSFORMS: usize = 6;
/// Support half-width of a sampled wavelet in units of its scale.
const SUPPORT: f64 = 8.0;
/// Taps below this fraction of the peak magnitude are trimmed from the ends.
const TRIM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WaveletFamily {
    /// First derivative of `exp(-i x) exp(-x^2)`.
    ComplexGaussian1,
    /// First derivative of `exp(-x^2)`.
    Gaussian1,
    /// Frequency B-spline of order 1, bandwidth 1, center frequency 1.
    FrequencyBSpline,
}

impl WaveletFamily {
    pub fn is_complex(self) -> bool {
        !matches!(self, WaveletFamily::Gaussian1)
    }

    pub fn psi(self, x: f64) -> Complex64 {
        match self {
            WaveletFamily::Gaussian1 => Complex64::new(-2.0 * x * (-x * x).exp(), 0.0),
            WaveletFamily::ComplexGaussian1 => {
                let env = (-x * x).exp();
                let carrier = Complex64::new(0.0, -x).exp();
                Complex64::new(-2.0 * x, -1.0) * carrier * env
            }
            WaveletFamily::FrequencyBSpline => {
                let (fb, fc, order) = (1.0f64, 1.0f64, 1i32);
                let arg = fb * x / order as f64;
                let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                fb.sqrt() * sinc.powi(order) * Complex64::new(0.0, 2.0 * PI * fc * x).exp()
            }
        }
    }

    /// Frequency (cycles per unit of `x`) at the peak of the wavelet's
    /// spectrum. The B-spline passband is flat around its center frequency.
    pub fn center_frequency(self) -> f64 {
        match self {
            WaveletFamily::Gaussian1 => 2f64.sqrt() / (2.0 * PI),
            WaveletFamily::ComplexGaussian1 => 1.0 / PI,
            WaveletFamily::FrequencyBSpline => 1.0,
        }
    }

    /// Pseudo-frequency in cycles per sample at `scale`.
    pub fn frequency_at(self, scale: f64) -> f64 {
        self.center_frequency() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub scale_lower: f64,
    pub scale_upper: f64,
}

impl WaveletSpec {
    pub const fn new(family: WaveletFamily, scale_lower: f64, scale_upper: f64) -> Self {
        Self {
            family,
            scale_lower,
            scale_upper,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scale_lower > 0.0 && self.scale_lower < self.scale_upper && self.scale_upper.is_finite()
    }

    /// Sixteen linearly spaced scales including both limits.
    pub fn scales(&self) -> [f64; N_SCALES] {
        let step = (self.scale_upper - self.scale_lower) / (N_SCALES - 1) as f64;
        std::array::from_fn(|j| {
            if j == N_SCALES - 1 {
                self.scale_upper
            } else {
                self.scale_lower + step * j as f64
            }
        })
    }
}

/// The six (wavelet, scale range) settings, in stack channel order.
pub const STACK_SETTINGS: [WaveletSpec; N_TRANSFORMS] = [
    WaveletSpec::new(WaveletFamily::ComplexGaussian1, 1.0, 8.0),
    WaveletSpec::new(WaveletFamily::ComplexGaussian1, 8.0, 50.0),
    WaveletSpec::new(WaveletFamily::Gaussian1, 0.6, 6.5),
    WaveletSpec::new(WaveletFamily::Gaussian1, 6.5, 35.0),
    WaveletSpec::new(WaveletFamily::FrequencyBSpline, 1.5, 10.0),
    WaveletSpec::new(WaveletFamily::FrequencyBSpline, 10.0, 40.0),
];

/// Sampled dilated wavelet with its center tap index.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub taps: Vec<Complex64>,
    pub center: usize,
}

pub fn sampled_wavelet(family: WaveletFamily, scale: f64) -> Kernel {
    let half = (SUPPORT * scale).ceil() as i64;
    let norm = 1.0 / scale.sqrt();
    let mut taps: Vec<Complex64> = (-half..=half).map(|t| family.psi(t as f64 / scale) * norm).collect();
    let peak = taps.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut center = half as usize;
    // trim symmetric tails that carry no weight
    while taps.len() > 1 && taps[0].norm() < TRIM * peak && taps[taps.len() - 1].norm() < TRIM * peak {
        taps.remove(0);
        taps.pop();
        center -= 1;
    }
    Kernel { taps, center }
}

/// Symmetric ("half-sample") reflection of an out-of-range index.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - 1 - r;
    }
    r as usize
}

/// `out[t] = sum_j x[t - (j - center)] * taps[j]`.
fn convolve(signal: &[f64], kernel: &Kernel) -> Vec<Complex64> {
    let n = signal.len();
    let c = kernel.center as isize;
    let interior_lo = (kernel.taps.len() as isize - 1 - c).max(0) as usize;
    let interior_hi = (n as isize - c).max(0) as usize;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        if t >= interior_lo && t < interior_hi {
            let base = t as isize + c;
            for (j, w) in kernel.taps.iter().enumerate() {
                acc += w * signal[(base - j as isize) as usize];
            }
        } else {
            for (j, w) in kernel.taps.iter().enumerate() {
                acc += w * signal[reflect(t as isize + c - j as isize, n)];
            }
        }
        *o = acc;
    }
    out
}

/// 16 x n magnitude scalogram (real families keep their sign).
pub fn cwt(signal: &[f64], wavelet: &WaveletSpec) -> Vec<Vec<f64>> {
    cwt_complex(signal, wavelet)
        .into_iter()
        .map(|row| {
            if wavelet.family.is_complex() {
                row.iter().map(|c| c.norm()).collect()
            } else {
                row.iter().map(|c| c.re).collect()
            }
        })
        .collect()
}

/// Complex coefficients before the modulus reduction.
pub fn cwt_complex(signal: &[f64], wavelet: &WaveletSpec) -> Vec<Vec<Complex64>> {
    if signal.is_empty() {
        return vec![vec![]; N_SCALES];
    }
    wavelet
        .scales()
        .iter()
        .map(|&s| convolve(signal, &sampled_wavelet(wavelet.family, s)))
        .collect()
}

/// `16 scales x 6 transforms x n` stack of 32-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramStack {
    n_samples: usize,
    /// Scale-major: `values[(scale * 6 + transform) * n + t]`.
    values: Vec<f32>,
}

impl SpectrogramStack {
    pub fn shape(&self) -> [usize; 3] {
        [N_SCALES, N_TRANSFORMS, self.n_samples]
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, scale: usize, transform: usize, t: usize) -> f32 {
        self.values[(scale * N_TRANSFORMS + transform) * self.n_samples + t]
    }

    pub fn size_bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<f32>()
    }

    pub fn from_values(n_samples: usize, values: Vec<f32>) -> Option<Self> {
        (values.len() == N_SCALES * N_TRANSFORMS * n_samples).then_some(Self { n_samples, values })
    }

    /// Network input layout: transforms as channels, scales as frequency.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let n = self.n_samples;
        let mut data = vec![0.0f32; self.values.len()];
        for s in 0..N_SCALES {
            for c in 0..N_TRANSFORMS {
                let src = &self.values[(s * N_TRANSFORMS + c) * n..][..n];
                data[(c * N_SCALES + s) * n..][..n].copy_from_slice(src);
            }
        }
        Tensor::from_vec([N_TRANSFORMS, N_SCALES, n], data).expect("stack shape")
    }

    /// Little-endian binary: magic `VSPC`, three `u32` dims, then `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.size_bytes());
        out.extend_from_slice(STACK_MAGIC);
        for d in self.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 16 || &bytes[..4] != STACK_MAGIC {
            return None;
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if dim(0) != N_SCALES || dim(1) != N_TRANSFORMS {
            return None;
        }
        let n = dim(2);
        let body = &bytes[16..];
        if body.len() != N_SCALES * N_TRANSFORMS * n * 4 {
            return None;
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(Self { n_samples: n, values })
    }
}

pub const STACK_MAGIC: &[u8; 4] = b"VSPC";

pub fn spectrogram_stack(signal: &[f64]) -> SpectrogramStack {
    let n = signal.len();
    let mut values = vec![0.0f32; N_SCALES * N_TRANSFORMS * n];
    for (c, spec) in STACK_SETTINGS.iter().enumerate() {
        for (s, row) in cwt(signal, spec).into_iter().enumerate() {
            let dst = &mut values[(s * N_TRANSFORMS + c) * n..][..n];
            for (d, v) in dst.iter_mut().zip(row) {
                *d = v as f32;
            }
        }
    }
    SpectrogramStack { n_samples: n, values }
}

/// Wavelet metadata written beside serialized stacks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackMetadata {
    pub shape: [usize; 3],
    pub layout: String,
    pub scale_spacing: String,
    pub reduction: String,
    pub transforms: Vec<TransformMetadata>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformMetadata {
    pub family: WaveletFamily,
    pub scales: Vec<f64>,
}

pub fn stack_metadata(n_samples: usize) -> StackMetadata {
    StackMetadata {
        shape: [N_SCALES, N_TRANSFORMS, n_samples],
        layout: "scale-major f32 little-endian after a 16-byte header".into(),
        scale_spacing: "linear, inclusive".into(),
        reduction: "modulus for complex wavelets, real part otherwise".into(),
        transforms: STACK_SETTINGS
            .iter()
            .map(|s| TransformMetadata {
                family: s.family,
                scales: s.scales().to_vec(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scales_are_linear_and_inclusive() {
        let s = STACK_SETTINGS[2].scales();
        assert_eq!(s[0], 0.6);
        assert_eq!(s[15], 6.5);
        let step = s[1] - s[0];
        for w in s.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_gives_zero_rows() {
        for spec in STACK_SETTINGS {
            let rows = cwt(&[0.0; 50], &spec);
            assert_eq!(rows.len(), N_SCALES);
            assert!(rows.iter().flatten().all(|v| *v == 0.0));
        }
        assert!(spectrogram_stack(&[0.0; 40]).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn real_family_is_linear() {
        let x: Vec<f64> = (0..120).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.3).collect();
        let a = -2.5;
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let spec = STACK_SETTINGS[3];
        for (r1, r2) in cwt(&x, &spec).iter().zip(cwt(&ax, &spec)) {
            for (v1, v2) in r1.iter().zip(r2) {
                assert!((a * v1 - v2).abs() < 1e-9 * (1.0 + v1.abs()));
            }
        }
        let cspec = STACK_SETTINGS[0];
        for (r1, r2) in cwt(&x, &cspec).iter().zip(cwt(&ax, &cspec)) {
            for (v1, v2) in r1.iter().zip(r2) {
                assert!((a.abs() * v1 - v2).abs() < 1e-9 * (1.0 + v1.abs()));
            }
        }
    }

    #[test]
    fn stack_shape_and_memory_ratio() {
        for n in [1, 7, 300] {
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).sin()).collect();
            let st = spectrogram_stack(&x);
            assert_eq!(st.shape(), [16, 6, n]);
            assert_eq!(st.size_bytes(), 96 * n * std::mem::size_of::<f32>());
            assert!(st.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn stack_binary_round_trip() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos()).collect();
        let st = spectrogram_stack(&x);
        assert_eq!(SpectrogramStack::from_bytes(&st.to_bytes()), Some(st.clone()));
        let t = st.to_tensor();
        assert_eq!(t.shape(), [6, 16, 64]);
        assert_eq!(t.row(4, 3)[10], st.get(3, 4, 10));
    }

    #[test]
    fn kernels_have_finite_symmetric_support() {
        for spec in STACK_SETTINGS {
            for s in spec.scales() {
                let k = sampled_wavelet(spec.family, s);
                assert_eq!(k.taps.len(), 2 * k.center + 1);
                assert!(k.taps.len() as f64 <= 2.0 * (SUPPORT * s).ceil() + 1.0);
            }
        }
    }

    /// Peak of |FT(psi)| by brute-force scan over frequency.
    fn spectral_peak(family: WaveletFamily) -> f64 {
        let dx = 0.01;
        let xs: Vec<f64> = (-2000..=2000).map(|i| i as f64 * dx).collect();
        let vals: Vec<Complex64> = xs.iter().map(|&x| family.psi(x)).collect();
        let mag = |f: f64| {
            xs.iter()
                .zip(&vals)
                .map(|(&x, &v)| v * Complex64::new(0.0, -2.0 * PI * f * x).exp())
                .sum::<Complex64>()
                .norm()
        };
        (1..=1000)
            .map(|i| i as f64 * 0.001)
            .map(|f| (f, mag(f).max(mag(-f))))
            .fold((0.0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    #[test]
    fn gaussian_center_frequencies_match_spectral_peak() {
        for fam in [WaveletFamily::Gaussian1, WaveletFamily::ComplexGaussian1] {
            assert!((fam.center_frequency() - spectral_peak(fam)).abs() < 2e-3, "{fam:?}");
        }
    }

    #[test]
    fn shift_equivariance_in_interior() {
        let n = 400;
        let d = 17;
        let x: Vec<f64> = (0..n)
            .map(|i| ((i as f64) * 0.07).sin() + ((i * 31 % 11) as f64) * 0.05)
            .collect();
        let mut shifted = vec![0.0; n];
        shifted[d..].copy_from_slice(&x[..n - d]);
        let spec = STACK_SETTINGS[2];
        let a = cwt(&x, &spec);
        let b = cwt(&shifted, &spec);
        for (s, (ra, rb)) in a.iter().zip(&b).enumerate() {
            let support = sampled_wavelet(spec.family, spec.scales()[s]).taps.len();
            for t in (support + d)..(n - support) {
                assert!((ra[t - d] - rb[t]).abs() < 1e-9, "scale {s} t {t}");
            }
        }
    }

    proptest! {
        #[test]
        fn finite_input_gives_finite_output(xs in proptest::collection::vec(-1e3f64..1e3, 1..80)) {
            let st = spectrogram_stack(&xs);
            prop_assert!(st.values().iter().all(|v| v.is_finite()));
        }
    }
}
