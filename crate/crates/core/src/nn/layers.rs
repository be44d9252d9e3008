//! Forward and backward kernels for every layer kind the U-Net uses.
//!
//! Time padding is always "same" (output length equals input length for
//! stride-1 convolutions). The frequency axis is either padded "same" or left
//! "valid", which lets the spectrogram head collapse the frequency extent.

use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Real, Tensor};
use super::NnError;

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// Leading pad for a "same" window of extent `k` (extra padding goes right).
fn same_pad(k: usize) -> usize {
    (k - 1) / 2
}

fn freq_geometry(freq: usize, kf: usize, padding: Padding) -> Result<(usize, usize), NnError> {
    match padding {
        Padding::Same => Ok((freq, same_pad(kf))),
        Padding::Valid => {
            if kf > freq {
                return Err(NnError::ShapeMismatch(format!(
                    "valid frequency kernel {kf} exceeds extent {freq}"
                )));
            }
            Ok((freq - kf + 1, 0))
        }
    }
}

/// Half-open output range `[lo, hi)` for which `t + shift` stays inside `0..len`.
#[inline]
fn shifted_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Convolution weights are laid out `[out][in][kf][kt]`.
pub fn conv_forward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    b: &[T],
    out_channels: usize,
    kernel: [usize; 2],
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let [cin, fin, time] = x.shape();
    let [kf, kt] = kernel;
    if w.len() != out_channels * cin * kf * kt || b.len() != out_channels {
        return Err(NnError::ShapeMismatch(format!(
            "conv weights {} for {cin}->{out_channels} kernel {kf}x{kt}",
            w.len()
        )));
    }
    let (fout, pf) = freq_geometry(fin, kf, padding)?;
    let pt = same_pad(kt);
    let mut y = Tensor::zeros(out_channels, fout, time);
    for co in 0..out_channels {
        for fo in 0..fout {
            let row = y.row_mut(co, fo);
            row.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..cin {
                for j in 0..kf {
                    let fi = fo as isize + j as isize - pf as isize;
                    if fi < 0 || fi >= fin as isize {
                        continue;
                    }
                    let xrow = x.row(ci, fi as usize);
                    let wbase = ((co * cin + ci) * kf + j) * kt;
                    for l in 0..kt {
                        let shift = l as isize - pt as isize;
                        let (lo, hi) = shifted_range(time, shift);
                        if lo >= hi {
                            continue;
                        }
                        let s = (lo as isize + shift) as usize;
                        axpy(w[wbase + l], &xrow[s..s + hi - lo], &mut row[lo..hi]);
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Returns the input gradient; accumulates into `gw` and `gb`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    gy: &Tensor<T>,
    kernel: [usize; 2],
    padding: Padding,
    gw: &mut [T],
    gb: &mut [T],
) -> Tensor<T> {
    let [cin, fin, time] = x.shape();
    let [cout, fout, _] = gy.shape();
    let [kf, kt] = kernel;
    let pf = match padding {
        Padding::Same => same_pad(kf),
        Padding::Valid => 0,
    };
    let pt = same_pad(kt);
    let mut gx = Tensor::zeros(cin, fin, time);
    for co in 0..cout {
        for fo in 0..fout {
            let grow = gy.row(co, fo);
            gb[co] += grow.iter().copied().sum::<T>();
            for ci in 0..cin {
                for j in 0..kf {
                    let fi = fo as isize + j as isize - pf as isize;
                    if fi < 0 || fi >= fin as isize {
                        continue;
                    }
                    let fi = fi as usize;
                    let wbase = ((co * cin + ci) * kf + j) * kt;
                    for l in 0..kt {
                        let shift = l as isize - pt as isize;
                        let (lo, hi) = shifted_range(time, shift);
                        if lo >= hi {
                            continue;
                        }
                        let s = (lo as isize + shift) as usize;
                        gw[wbase + l] += dot(&grow[lo..hi], &x.row(ci, fi)[s..s + hi - lo]);
                        axpy(w[wbase + l], &grow[lo..hi], &mut gx.row_mut(ci, fi)[s..s + hi - lo]);
                    }
                }
            }
        }
    }
    gx
}

/// Leading crop of a transposed convolution so that output length is `len * stride`.
fn transposed_pad(kernel: usize, stride: usize) -> usize {
    kernel.saturating_sub(stride) / 2
}

/// Time-axis transposed convolution, weights laid out `[in][out][kt]`.
/// Output time length is `input_time * stride`; the frequency axis passes through.
pub fn transposed_conv_forward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    b: &[T],
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<T>, NnError> {
    let [cin, freq, time] = x.shape();
    if w.len() != cin * out_channels * kernel || b.len() != out_channels {
        return Err(NnError::ShapeMismatch(format!(
            "transposed conv weights {} for {cin}->{out_channels} kernel {kernel}",
            w.len()
        )));
    }
    let tout = time * stride;
    let pad = transposed_pad(kernel, stride) as isize;
    let mut y = Tensor::zeros(out_channels, freq, tout);
    for co in 0..out_channels {
        for f in 0..freq {
            y.row_mut(co, f).iter_mut().for_each(|v| *v = b[co]);
        }
    }
    for ci in 0..cin {
        for co in 0..out_channels {
            let wbase = (ci * out_channels + co) * kernel;
            for f in 0..freq {
                let xrow = x.row(ci, f);
                let yrow = y.row_mut(co, f);
                for j in 0..kernel {
                    let wj = w[wbase + j];
                    let off = j as isize - pad;
                    for (i, &xi) in xrow.iter().enumerate() {
                        let o = (i * stride) as isize + off;
                        if o >= 0 && (o as usize) < tout {
                            yrow[o as usize] += wj * xi;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn transposed_conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    gy: &Tensor<T>,
    kernel: usize,
    stride: usize,
    gw: &mut [T],
    gb: &mut [T],
) -> Tensor<T> {
    let [cin, freq, time] = x.shape();
    let [cout, _, tout] = gy.shape();
    let pad = transposed_pad(kernel, stride) as isize;
    let mut gx = Tensor::zeros(cin, freq, time);
    for co in 0..cout {
        for f in 0..freq {
            gb[co] += gy.row(co, f).iter().copied().sum::<T>();
        }
    }
    for ci in 0..cin {
        for co in 0..cout {
            let wbase = (ci * cout + co) * kernel;
            for f in 0..freq {
                let xrow = x.row(ci, f);
                let grow = gy.row(co, f);
                let mut gxrow = vec![T::zero(); time];
                for j in 0..kernel {
                    let wj = w[wbase + j];
                    let off = j as isize - pad;
                    let mut acc = T::zero();
                    for i in 0..time {
                        let o = (i * stride) as isize + off;
                        if o >= 0 && (o as usize) < tout {
                            let g = grow[o as usize];
                            acc += g * xrow[i];
                            gxrow[i] += wj * g;
                        }
                    }
                    gw[wbase + j] += acc;
                }
                axpy(T::one(), &gxrow, gx.row_mut(ci, f));
            }
        }
    }
    gx
}

/// Non-overlapping max pooling. Time must divide evenly; the frequency axis
/// uses ceiling division so trailing bins form a partial window.
pub fn max_pool_forward<T: Real>(x: &Tensor<T>, pool: [usize; 2]) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let [c, f, t] = x.shape();
    let [pf, pt] = pool;
    if t % pt != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "time length {t} not divisible by pool size {pt}"
        )));
    }
    let fout = f.div_ceil(pf);
    let tout = t / pt;
    let mut y = Tensor::zeros(c, fout, tout);
    let mut arg = vec![0u32; c * fout * tout];
    for ci in 0..c {
        for fo in 0..fout {
            let f_hi = ((fo + 1) * pf).min(f);
            for to in 0..tout {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for fi in fo * pf..f_hi {
                    let row = x.row(ci, fi);
                    for ti in to * pt..(to + 1) * pt {
                        if row[ti] > best {
                            best = row[ti];
                            best_idx = (ci * f + fi) * t + ti;
                        }
                    }
                }
                let out_idx = (ci * fout + fo) * tout + to;
                y.data_mut()[out_idx] = best;
                arg[out_idx] = best_idx as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn max_pool_backward<T: Real>(input_shape: [usize; 3], arg: &[u32], gy: &Tensor<T>) -> Tensor<T> {
    let [c, f, t] = input_shape;
    let mut gx = Tensor::zeros(c, f, t);
    let gxd = gx.data_mut();
    for (g, &a) in gy.data().iter().zip(arg) {
        gxd[a as usize] += *g;
    }
    gx
}

/// Per-group statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm_forward<T: Real>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &[T],
    beta: &[T],
) -> Result<(Tensor<T>, GroupStats<T>), NnError> {
    let [c, f, t] = x.shape();
    if groups == 0 || c % groups != 0 || gamma.len() != c || beta.len() != c {
        return Err(NnError::ShapeMismatch(format!(
            "group norm over {c} channels with {groups} groups"
        )));
    }
    let per = c / groups;
    let block = per * f * t;
    let n = T::from_usize(block).unwrap();
    let eps = T::from_f64_lossy(GROUP_NORM_EPS);
    let mut y = Tensor::zeros(c, f, t);
    let mut stats = GroupStats {
        mean: Vec::with_capacity(groups),
        rstd: Vec::with_capacity(groups),
    };
    for g in 0..groups {
        let xs = &x.data()[g * block..(g + 1) * block];
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        stats.mean.push(mean);
        stats.rstd.push(rstd);
        let ys = &mut y.data_mut()[g * block..(g + 1) * block];
        for (k, ch) in (g * per..(g + 1) * per).enumerate() {
            let span = k * f * t..(k + 1) * f * t;
            let (ga, be) = (gamma[ch], beta[ch]);
            for (yv, &xv) in ys[span.clone()].iter_mut().zip(&xs[span]) {
                *yv = (xv - mean) * rstd * ga + be;
            }
        }
    }
    Ok((y, stats))
}

pub fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &[T],
    stats: &GroupStats<T>,
    gy: &Tensor<T>,
    ggamma: &mut [T],
    gbeta: &mut [T],
) -> Tensor<T> {
    let [c, f, t] = x.shape();
    let per = c / groups;
    let chan = f * t;
    let block = per * chan;
    let n = T::from_usize(block).unwrap();
    let mut gx = Tensor::zeros(c, f, t);
    let mut xhat = vec![T::zero(); block];
    let mut dxhat = vec![T::zero(); block];
    for g in 0..groups {
        let (mean, rstd) = (stats.mean[g], stats.rstd[g]);
        let xs = &x.data()[g * block..(g + 1) * block];
        let gs = &gy.data()[g * block..(g + 1) * block];
        for k in 0..per {
            let ch = g * per + k;
            let mut sg = T::zero();
            let mut sb = T::zero();
            for i in k * chan..(k + 1) * chan {
                xhat[i] = (xs[i] - mean) * rstd;
                dxhat[i] = gs[i] * gamma[ch];
                sg += gs[i] * xhat[i];
                sb += gs[i];
            }
            ggamma[ch] += sg;
            gbeta[ch] += sb;
        }
        let sum_d = dxhat.iter().copied().sum::<T>();
        let sum_dx = dot(&dxhat, &xhat);
        let gxs = &mut gx.data_mut()[g * block..(g + 1) * block];
        for i in 0..block {
            gxs[i] = rstd / n * (n * dxhat[i] - sum_d - xhat[i] * sum_dx);
        }
    }
    gx
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    gx
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    y
}

/// Backward through a sigmoid using its cached output.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, &s) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (T::one() - s);
    }
    gx
}

/// Channel-axis concatenation.
pub fn concat_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [ca, fa, ta] = a.shape();
    let [cb, fb, tb] = b.shape();
    if fa != fb || ta != tb {
        return Err(NnError::ShapeMismatch(format!(
            "concat of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec([ca + cb, fa, ta], data)
}

pub fn concat_backward<T: Real>(a_channels: usize, gy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let [c, f, t] = gy.shape();
    let split = a_channels * f * t;
    let ga = Tensor::from_vec([a_channels, f, t], gy.data()[..split].to_vec()).unwrap();
    let gb = Tensor::from_vec([c - a_channels, f, t], gy.data()[split..].to_vec()).unwrap();
    (ga, gb)
}

pub fn add_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "add of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut y = a.clone();
    axpy(T::one(), b.data(), y.data_mut());
    Ok(y)
}
