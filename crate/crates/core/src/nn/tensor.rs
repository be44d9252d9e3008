//! Dense `(channels, frequency, time)` tensors and the scalar trait the
//! engine is generic over.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NnError;

/// Floating-point element type. Training runs at `f32`, gradient checks at `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major tensor of shape `[channels, freq, time]`. Raw signals use `freq == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, freq: usize, time: usize) -> Self {
        Self {
            shape: [channels, freq, time],
            data: vec![T::zero(); channels * freq * time],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<T>) -> Result<Self, NnError> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(NnError::ShapeMismatch(format!(
                "buffer of {} values cannot hold shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    /// Single-channel series of shape `[1, 1, n]`.
    pub fn from_series(series: &[T]) -> Self {
        Self {
            shape: [1, 1, series.len()],
            data: series.to_vec(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    pub fn channels(&self) -> usize {
        self.shape[0]
    }
    pub fn freq(&self) -> usize {
        self.shape[1]
    }
    pub fn time(&self) -> usize {
        self.shape[2]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Time row of one `(channel, freq)` pair.
    pub fn row(&self, c: usize, f: usize) -> &[T] {
        let t = self.shape[2];
        let start = (c * self.shape[1] + f) * t;
        &self.data[start..start + t]
    }

    pub fn row_mut(&mut self, c: usize, f: usize) -> &mut [T] {
        let t = self.shape[2];
        let start = (c * self.shape[1] + f) * t;
        &mut self.data[start..start + t]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Zero-pads (or crops) the time axis on the right to `time`.
    pub fn with_time(&self, time: usize) -> Self {
        let [c, f, t] = self.shape;
        let mut out = Self::zeros(c, f, time);
        let keep = t.min(time);
        for ci in 0..c {
            for fi in 0..f {
                out.row_mut(ci, fi)[..keep].copy_from_slice(&self.row(ci, fi)[..keep]);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// `y += a * x` over equal-length slices.
#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with a fixed eight-lane accumulation order, so results are
/// reproducible while still vectorizing.
#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail += *a * *b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec([2, 1, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec([2, 1, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn with_time_pads_and_crops() {
        let t = Tensor::<f64>::from_series(&[1.0, 2.0, 3.0]);
        assert_eq!(t.with_time(5).data(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(t.with_time(2).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let x: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - naive).abs() < 1e-9);
    }
}
