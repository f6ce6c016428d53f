//! Dense row-major `f64` tensors and the small kernel set the network needs.
//!
//! Convolutions follow one fixed geometry: kernel `(2, 3)` over (time,
//! frequency), stride `(1, 2)`, one zero frame of causal padding in time and
//! one zero bin on each side in frequency. Kernels are stored as
//! `[kt][kf][cin][cout]`; tap `kt = 0` reads the previous frame and `kt = 1`
//! the current one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DsnError, Result};

/// Time extent of every convolution kernel.
pub const KERNEL_T: usize = 2;
/// Frequency extent of every convolution kernel.
pub const KERNEL_F: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DsnError::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(DsnError::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DsnError::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Deterministic random source. ChaCha8 keeps the stream identical across
/// platforms for a given seed.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Standard Gumbel(0, 1) sample.
    pub fn gumbel(&mut self) -> f64 {
        // open interval keeps both logarithms finite
        let u = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        -(-u.ln()).ln()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform_in(lo, hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Fan-in / fan-out of a weight shape: `[in, out]` for dense layers and
/// `[kt, kf, cin, cout]` for convolutions.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [rest @ .., cin, cout] => {
            let receptive: usize = rest.iter().product();
            (receptive * cin, receptive * cout)
        }
    }
}

/// Glorot-uniform initialization, bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.uniform_tensor(shape, -bound, bound)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        s => return Err(DsnError::shape(format!("matmul lhs must be 2-D, got {s:?}"))),
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        s => return Err(DsnError::shape(format!("matmul rhs must be 2-D, got {s:?}"))),
    };
    if k != k2 {
        return Err(DsnError::shape(format!(
            "matmul inner dims differ: {m}x{k} * {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    let t = Tensor {
        shape: vec![m, n],
        data: out,
    };
    t.check_finite("matmul")?;
    Ok(t)
}

/// `out[j] += sum_i x[i] * w[i][j]` with `w` stored `[x.len()][out.len()]`.
#[inline]
pub fn vec_mat_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(w.len(), x.len() * n);
    for (i, &xv) in x.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
}

/// Output bins of a stride-2 convolution with symmetric padding of one bin.
pub fn conv_out_bins(f_in: usize) -> usize {
    (f_in + 2 - KERNEL_F) / 2 + 1
}

/// Output bins of the matching transposed convolution.
pub fn deconv_out_bins(f_in: usize) -> usize {
    2 * f_in - 1
}

fn kernel_dims(k: &Tensor) -> Result<(usize, usize)> {
    match k.shape() {
        [KERNEL_T, KERNEL_F, cin, cout] => Ok((*cin, *cout)),
        s => Err(DsnError::shape(format!(
            "conv kernel must be [2, 3, cin, cout], got {s:?}"
        ))),
    }
}

/// One output frame of the causal strided convolution.
///
/// `prev` and `cur` are `[f_in][cin]` frames, `out` is `[f_out][cout]` and is
/// overwritten. Every kernel tap is evaluated, padding included, so the work
/// done is exactly `f_out * cout * (6 * cin + 1)` multiply-accumulates.
pub fn conv_frame(
    prev: &[f64],
    cur: &[f64],
    f_in: usize,
    cin: usize,
    kernel: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let cout = bias.len();
    let f_out = conv_out_bins(f_in);
    debug_assert_eq!(prev.len(), f_in * cin);
    debug_assert_eq!(cur.len(), f_in * cin);
    debug_assert_eq!(out.len(), f_out * cout);
    debug_assert_eq!(kernel.len(), KERNEL_T * KERNEL_F * cin * cout);
    let zeros = vec![0.0; cin];
    for fo in 0..f_out {
        let acc = &mut out[fo * cout..(fo + 1) * cout];
        acc.copy_from_slice(bias);
        for (kt, frame) in [prev, cur].into_iter().enumerate() {
            for kf in 0..KERNEL_F {
                let fi = (2 * fo + kf) as isize - 1;
                let x = if fi < 0 || fi as usize >= f_in {
                    &zeros[..]
                } else {
                    let fi = fi as usize;
                    &frame[fi * cin..(fi + 1) * cin]
                };
                let base = (kt * KERNEL_F + kf) * cin * cout;
                vec_mat_acc(x, &kernel[base..base + cin * cout], acc);
            }
        }
    }
}

/// One output frame of the transposed convolution (causal in time, the
/// frequency adjoint of [`conv_frame`]).
///
/// `prev`/`cur` are `[f_in][cin]`, `out` is `[2 f_in - 1][cout]`.
pub fn conv_transpose_frame(
    prev: &[f64],
    cur: &[f64],
    f_in: usize,
    cin: usize,
    kernel: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let cout = bias.len();
    let f_out = deconv_out_bins(f_in);
    debug_assert_eq!(out.len(), f_out * cout);
    // scatter into a buffer with one padding bin on each side, then crop
    let padded_bins = f_out + 2;
    let mut padded = vec![0.0; padded_bins * cout];
    for (kt, frame) in [prev, cur].into_iter().enumerate() {
        for fi in 0..f_in {
            let x = &frame[fi * cin..(fi + 1) * cin];
            for kf in 0..KERNEL_F {
                let pos = 2 * fi + kf;
                let base = (kt * KERNEL_F + kf) * cin * cout;
                vec_mat_acc(
                    x,
                    &kernel[base..base + cin * cout],
                    &mut padded[pos * cout..(pos + 1) * cout],
                );
            }
        }
    }
    for f in 0..f_out {
        let src = &padded[(f + 1) * cout..(f + 2) * cout];
        for ((o, &s), &b) in out[f * cout..(f + 1) * cout].iter_mut().zip(src).zip(bias) {
            *o = s + b;
        }
    }
}

fn seq_dims(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [t, f, c] => Ok((*t, *f, *c)),
        s => Err(DsnError::shape(format!("{what} input must be [T, F, C], got {s:?}"))),
    }
}

/// Causal strided 2-D convolution over a `[T, F, Cin]` tensor.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let (t_len, f_in, cin) = seq_dims(x, "conv2d")?;
    let (kcin, cout) = kernel_dims(kernel)?;
    if kcin != cin {
        return Err(DsnError::shape(format!(
            "conv2d kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    let zero_bias = vec![0.0; cout];
    let bias = bias.unwrap_or(&zero_bias);
    if bias.len() != cout {
        return Err(DsnError::shape("conv2d bias length differs from cout"));
    }
    let f_out = conv_out_bins(f_in);
    let frame = f_in * cin;
    let zero_frame = vec![0.0; frame];
    let mut out = vec![0.0; t_len * f_out * cout];
    for t in 0..t_len {
        let prev = if t == 0 {
            &zero_frame[..]
        } else {
            &x.data[(t - 1) * frame..t * frame]
        };
        let cur = &x.data[t * frame..(t + 1) * frame];
        conv_frame(
            prev,
            cur,
            f_in,
            cin,
            kernel.data(),
            bias,
            &mut out[t * f_out * cout..(t + 1) * f_out * cout],
        );
    }
    let t = Tensor {
        shape: vec![t_len, f_out, cout],
        data: out,
    };
    t.check_finite("conv2d")?;
    Ok(t)
}

/// Transposed counterpart of [`conv2d`]: `[T, F, Cin] -> [T, 2F - 1, Cout]`.
///
/// In frequency this is the exact adjoint of the strided convolution. In time
/// it stays causal, so the full adjoint identity holds after reversing the
/// time axis of both operands.
pub fn conv2d_transpose(x: &Tensor, kernel: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let (t_len, f_in, cin) = seq_dims(x, "conv2d_transpose")?;
    let (kcin, cout) = kernel_dims(kernel)?;
    if kcin != cin {
        return Err(DsnError::shape(format!(
            "conv2d_transpose kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    let zero_bias = vec![0.0; cout];
    let bias = bias.unwrap_or(&zero_bias);
    if bias.len() != cout {
        return Err(DsnError::shape("conv2d_transpose bias length differs from cout"));
    }
    let f_out = deconv_out_bins(f_in);
    let frame = f_in * cin;
    let zero_frame = vec![0.0; frame];
    let mut out = vec![0.0; t_len * f_out * cout];
    for t in 0..t_len {
        let prev = if t == 0 {
            &zero_frame[..]
        } else {
            &x.data[(t - 1) * frame..t * frame]
        };
        let cur = &x.data[t * frame..(t + 1) * frame];
        conv_transpose_frame(
            prev,
            cur,
            f_in,
            cin,
            kernel.data(),
            bias,
            &mut out[t * f_out * cout..(t + 1) * f_out * cout],
        );
    }
    let t = Tensor {
        shape: vec![t_len, f_out, cout],
        data: out,
    };
    t.check_finite("conv2d_transpose")?;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn pointwise(x: &Tensor, act: Activation) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| act.apply(v)).collect(),
    }
}

/// Numerically stable softmax of a slice, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Strides of `shape` around `axis`: (outer count, axis length, inner count).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(DsnError::shape(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let (outer, n, inner) = split_axis(&x.shape, axis);
    let mut out = x.data.clone();
    let mut lane = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for (k, l) in lane.iter_mut().enumerate() {
                *l = x.data[(o * n + k) * inner + i];
            }
            softmax_in_place(&mut lane);
            for (k, l) in lane.iter().enumerate() {
                out[(o * n + k) * inner + i] = *l;
            }
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Mean and population standard deviation (divisor N) over `axes`.
///
/// The reduced axes are removed from the output shape.
pub fn axis_stats(x: &Tensor, axes: &[usize]) -> Result<(Tensor, Tensor)> {
    if let Some(&bad) = axes.iter().find(|&&a| a >= x.rank()) {
        return Err(DsnError::shape(format!(
            "axis {bad} out of range for rank {}",
            x.rank()
        )));
    }
    let kept: Vec<usize> = (0..x.rank()).filter(|a| !axes.contains(a)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&a| x.shape[a]).collect();
    let out_len: usize = out_shape.iter().product();
    let count = (x.len() / out_len.max(1)) as f64;

    let mut sum = vec![0.0; out_len];
    let mut sq = vec![0.0; out_len];
    let mut index = vec![0usize; x.rank()];
    let kept_offset = |index: &[usize]| {
        kept.iter()
            .fold(0usize, |acc, &a| acc * x.shape[a] + index[a])
    };
    for &v in &x.data {
        let o = kept_offset(&index);
        sum[o] += v;
        // advance the multi-index
        for a in (0..x.rank()).rev() {
            index[a] += 1;
            if index[a] < x.shape[a] {
                break;
            }
            index[a] = 0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    index.iter_mut().for_each(|i| *i = 0);
    for &v in &x.data {
        let o = kept_offset(&index);
        let d = v - mean[o];
        sq[o] += d * d;
        for a in (0..x.rank()).rev() {
            index[a] += 1;
            if index[a] < x.shape[a] {
                break;
            }
            index[a] = 0;
        }
    }
    let std = sq.iter().map(|s| (s / count).sqrt()).collect();
    Ok((
        Tensor {
            shape: out_shape.clone(),
            data: mean,
        },
        Tensor {
            shape: out_shape,
            data: std,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    /// Sliding-window reference with explicit padding checks.
    fn naive_conv(x: &Tensor, k: &Tensor, bias: &[f64]) -> Tensor {
        let (t_len, f_in, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cout = k.shape()[3];
        let f_out = (f_in + 2 - 3) / 2 + 1;
        let mut out = Tensor::zeros(&[t_len, f_out, cout]);
        for t in 0..t_len {
            for fo in 0..f_out {
                for co in 0..cout {
                    let mut s = bias[co];
                    for kt in 0..2 {
                        let ti = t as isize + kt as isize - 1;
                        if ti < 0 {
                            continue;
                        }
                        for kf in 0..3 {
                            let fi = (2 * fo + kf) as isize - 1;
                            if fi < 0 || fi >= f_in as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                s += x.get(&[ti as usize, fi as usize, ci]) * k.get(&[kt, kf, ci, co]);
                            }
                        }
                    }
                    out.set(&[t, fo, co], s);
                }
            }
        }
        out
    }

    fn reverse_time(x: &Tensor) -> Tensor {
        let (t_len, rest) = (x.shape()[0], x.len() / x.shape()[0]);
        let mut data = Vec::with_capacity(x.len());
        for t in (0..t_len).rev() {
            data.extend_from_slice(&x.data()[t * rest..(t + 1) * rest]);
        }
        Tensor::new(x.shape().to_vec(), data).unwrap()
    }

    /// `[2, 3, a, b] -> [2, 3, b, a]`
    fn swap_channels(k: &Tensor) -> Tensor {
        let (a, b) = (k.shape()[2], k.shape()[3]);
        let mut out = Tensor::zeros(&[2, 3, b, a]);
        for kt in 0..2 {
            for kf in 0..3 {
                for i in 0..a {
                    for j in 0..b {
                        out.set(&[kt, kf, j, i], k.get(&[kt, kf, i, j]));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_zeros() {
        let mut rng = SeededRng::new(1);
        let a = rng.uniform_tensor(&[3, 4], -1.0, 1.0);
        assert_eq!(matmul(&a, &Tensor::identity(4)).unwrap(), a);
        let z = matmul(&Tensor::zeros(&[2, 3]), &a).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(2);
        let a = rng.uniform_tensor(&[3, 3], -1.0, 1.0);
        let b = rng.uniform_tensor(&[3, 3], -1.0, 1.0);
        let got = matmul(&a, &b).unwrap();
        assert!(got.max_abs_diff(&naive_matmul(&a, &b)) < 1e-14);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2])).unwrap_err();
        assert!(matches!(err, DsnError::Shape(_)));
    }

    #[test]
    fn tensor_rejects_bad_length_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::NAN]),
            Err(DsnError::NonFinite(_))
        ));
    }

    #[test]
    fn conv_delta_kernel_is_strided_copy() {
        let mut rng = SeededRng::new(3);
        let x = rng.uniform_tensor(&[4, 9, 1], -1.0, 1.0);
        let mut k = Tensor::zeros(&[2, 3, 1, 1]);
        k.set(&[1, 1, 0, 0], 1.0);
        let y = conv2d(&x, &k, None).unwrap();
        assert_eq!(y.shape(), &[4, 5, 1]);
        for t in 0..4 {
            for f in 0..5 {
                assert_eq!(y.get(&[t, f, 0]), x.get(&[t, 2 * f, 0]));
            }
        }
    }

    #[test]
    fn conv_zero_input_zero_output() {
        let mut rng = SeededRng::new(4);
        let k = xavier_init(&mut rng, &[2, 3, 2, 3]);
        let y = conv2d(&Tensor::zeros(&[3, 7, 2]), &k, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = conv2d_transpose(&Tensor::zeros(&[3, 4, 3]), &swap_channels(&k), None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let mut rng = SeededRng::new(5);
        let x = rng.uniform_tensor(&[4, 9, 1], -1.0, 1.0);
        let k = rng.uniform_tensor(&[2, 3, 1, 2], -1.0, 1.0);
        let bias = [0.1, -0.2];
        let got = conv2d(&x, &k, Some(&bias)).unwrap();
        assert!(got.max_abs_diff(&naive_conv(&x, &k, &bias)) < 1e-14);

        let x = rng.uniform_tensor(&[3, 8, 3], -1.0, 1.0);
        let k = rng.uniform_tensor(&[2, 3, 3, 4], -1.0, 1.0);
        let bias = [0.0; 4];
        let got = conv2d(&x, &k, None).unwrap();
        assert!(got.max_abs_diff(&naive_conv(&x, &k, &bias)) < 1e-13);
    }

    #[test]
    fn deconv_restores_reference_extents() {
        let mut rng = SeededRng::new(6);
        let x = rng.uniform_tensor(&[3, 257, 1], -1.0, 1.0);
        let k = rng.uniform_tensor(&[2, 3, 1, 4], -1.0, 1.0);
        let y = conv2d(&x, &k, None).unwrap();
        assert_eq!(y.shape(), &[3, 129, 4]);
        let back = conv2d_transpose(&y, &swap_channels(&k), None).unwrap();
        assert_eq!(back.shape(), x.shape());
        for f in [257, 129, 65] {
            assert_eq!(deconv_out_bins(conv_out_bins(f)), f);
        }
    }

    #[test]
    fn deconv_is_time_reversed_adjoint() {
        let mut rng = SeededRng::new(7);
        for &(t_len, f_in, a, b) in &[(1, 9, 2, 3), (4, 9, 2, 3), (5, 17, 3, 2)] {
            let x = rng.uniform_tensor(&[t_len, f_in, a], -1.0, 1.0);
            let k = rng.uniform_tensor(&[2, 3, a, b], -1.0, 1.0);
            let y = rng.uniform_tensor(&[t_len, conv_out_bins(f_in), b], -1.0, 1.0);
            let lhs = conv2d(&x, &k, None).unwrap().dot(&y);
            let back = conv2d_transpose(&reverse_time(&y), &swap_channels(&k), None).unwrap();
            let rhs = x.dot(&reverse_time(&back));
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
            if t_len == 1 {
                // a single frame needs no reversal
                let direct = conv2d_transpose(&y, &swap_channels(&k), None).unwrap();
                assert!((x.dot(&direct) - lhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn conv_is_causal() {
        let mut rng = SeededRng::new(8);
        let x = rng.uniform_tensor(&[6, 9, 2], -1.0, 1.0);
        let k = rng.uniform_tensor(&[2, 3, 2, 2], -1.0, 1.0);
        let kt = swap_channels(&k);
        let full = conv2d(&x, &k, None).unwrap();
        let full_t = conv2d_transpose(&full, &kt, None).unwrap();
        for cut in 0..6 {
            let mut y = x.clone();
            let frame = 9 * 2;
            for v in &mut y.data_mut()[(cut + 1) * frame..] {
                *v = 0.0;
            }
            let part = conv2d(&y, &k, None).unwrap();
            let part_t = conv2d_transpose(&part, &kt, None).unwrap();
            let n = (cut + 1) * 5 * 2;
            assert_eq!(&part.data()[..n], &full.data()[..n]);
            let n = (cut + 1) * 9 * 2;
            assert_eq!(&part_t.data()[..n], &full_t.data()[..n]);
        }
    }

    #[test]
    fn pointwise_softmax_stats() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = softmax(&Tensor::new(vec![1, 2], vec![3.0, 3.0]).unwrap(), 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let mut rng = SeededRng::new(9);
        let x = rng.uniform_tensor(&[3, 5], -4.0, 4.0);
        let s = softmax(&x, 1).unwrap();
        for r in 0..3 {
            let sum: f64 = s.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
        let (mean, std) = axis_stats(&Tensor::filled(&[4, 6, 2], 1.5), &[1]).unwrap();
        assert_eq!(mean.shape(), &[4, 2]);
        assert!(mean.data().iter().all(|&v| v == 1.5));
        assert!(std.data().iter().all(|&v| v == 0.0));
        let relu = pointwise(&Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(), Activation::Relu);
        assert_eq!(relu.data(), &[0.0, 2.0]);
    }

    #[test]
    fn axis_stats_population_std() {
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (m, s) = axis_stats(&x, &[1]).unwrap();
        assert_eq!(m.data(), &[2.5]);
        assert!((s.data()[0] - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn xavier_reproducible_and_bounded() {
        let a = xavier_init(&mut SeededRng::new(11), &[16, 64]);
        let b = xavier_init(&mut SeededRng::new(11), &[16, 64]);
        assert_eq!(a, b);
        let bound = (6.0f64 / 80.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn xavier_mean_within_three_sigma() {
        let n = 100_000;
        let t = xavier_init(&mut SeededRng::new(12), &[n / 100, 100]);
        let bound = (6.0 / (n / 100 + 100) as f64).sqrt();
        let mean = t.data().iter().sum::<f64>() / n as f64;
        // std of the mean of n uniform(-b, b) draws
        let sigma = bound / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn gumbel_is_finite() {
        let mut rng = SeededRng::new(13);
        assert!((0..10_000).all(|_| rng.gumbel().is_finite()));
    }
}
