//! Dense f32 tensors and the numeric kernels shared by the expression
//! classifier and the language model. All kernels are pure functions.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("{channels} channels cannot be split into {groups} groups")]
    BadGrouping { channels: usize, groups: usize },
    #[error("invalid shape {0:?}: dimensions must be >= 1 and match the data length")]
    InvalidShape(Vec<usize>),
}

/// Row-major tensor of 32-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::InvalidShape(shape));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n]).expect("non-empty shape")
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n]).expect("non-empty shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Size of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    pub fn transpose2(&self) -> Result<Tensor, TensorError> {
        let [m, n] = self.shape[..] else {
            return Err(TensorError::ShapeMismatch("transpose needs a rank-2 tensor"));
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }
}

/// `c = a . b` for rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let ([m, k], [k2, n]) = (a.shape(), b.shape()) else {
        return Err(TensorError::ShapeMismatch("matmul operands must be rank 2"));
    };
    if k != k2 {
        return Err(TensorError::ShapeMismatch("matmul inner dimensions differ"));
    }
    let (m, k, n) = (*m, *k, *n);
    let mut out = vec![0.0f32; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// Accumulating `out[m x n] += a[m x k] . b[k x n]` over raw row-major slices.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so the output is `ceil(input / stride)`; extra padding
    /// goes to the bottom/right.
    Same,
    Valid,
}

/// Output size and leading pad along one spatial axis.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (kernel <= input).then(|| ((input - kernel) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

/// 2-D cross-correlation of an `h x w x c_in` input with a
/// `kh x kw x (c_in / groups) x c_out` kernel. `groups = c_in` gives a
/// depthwise convolution.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: Padding,
    groups: usize,
) -> Result<Tensor, TensorError> {
    let [h, w, c_in] = input.shape()[..] else {
        return Err(TensorError::ShapeMismatch("conv2d input must be h x w x c"));
    };
    let [kh, kw, c_per_group, c_out] = kernels.shape()[..] else {
        return Err(TensorError::ShapeMismatch("conv2d kernel must be kh x kw x c_in x c_out"));
    };
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(TensorError::BadGrouping { channels: c_in, groups });
    }
    if c_per_group != c_in / groups {
        return Err(TensorError::ShapeMismatch("conv2d kernel input channels do not match input / groups"));
    }
    if stride == 0 {
        return Err(TensorError::ShapeMismatch("conv2d stride must be positive"));
    }
    let (oh, pad_top) = conv_output_dim(h, kh, stride, padding)
        .ok_or(TensorError::ShapeMismatch("conv2d kernel taller than input"))?;
    let (ow, pad_left) = conv_output_dim(w, kw, stride, padding)
        .ok_or(TensorError::ShapeMismatch("conv2d kernel wider than input"))?;
    let out_per_group = c_out / groups;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; oh * ow * c_out];

    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * c_out..(oy * ow + ox + 1) * c_out];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad_left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &x[(iy as usize * w + ix as usize) * c_in..][..c_in];
                    let kbase = (ky * kw + kx) * c_per_group * c_out;
                    for g in 0..groups {
                        let oc0 = g * out_per_group;
                        for ci in 0..c_per_group {
                            let v = px[g * c_per_group + ci];
                            if v == 0.0 {
                                continue;
                            }
                            let krow = &k[kbase + ci * c_out + oc0..][..out_per_group];
                            for (a, kv) in acc[oc0..oc0 + out_per_group].iter_mut().zip(krow) {
                                *a += v * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c_out], out)
}

/// Per-row `(x - mean) / sqrt(var + eps) * gamma + beta` over the last
/// dimension, with population variance.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor, TensorError> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return Err(TensorError::ShapeMismatch("layernorm gamma/beta must match the last dimension"));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        layernorm_row(row, gamma.data(), beta.data(), eps);
    }
    Ok(out)
}

pub(crate) fn layernorm_row(row: &mut [f32], gamma: &[f32], beta: &[f32], eps: f32) {
    let d = row.len() as f32;
    let mean = row.iter().sum::<f32>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
    let inv = 1.0 / libm::sqrtf(var + eps);
    for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
        *v = (*v - mean) * inv * g + b;
    }
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::tanhf(SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)))
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.clone().map(gelu_scalar)
}

/// Row-wise softmax over the last dimension, max-subtracted.
pub fn softmax(logits: &Tensor) -> Tensor {
    let d = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Max pooling over `size x size` windows of an `h x w x c` tensor.
pub fn max_pool2d(input: &Tensor, size: usize, stride: usize, padding: Padding) -> Result<Tensor, TensorError> {
    let [h, w, c] = input.shape()[..] else {
        return Err(TensorError::ShapeMismatch("max_pool2d input must be h x w x c"));
    };
    if size == 0 || stride == 0 {
        return Err(TensorError::ShapeMismatch("pool size and stride must be positive"));
    }
    let (oh, pt) = conv_output_dim(h, size, stride, padding)
        .ok_or(TensorError::ShapeMismatch("pool window taller than input"))?;
    let (ow, pl) = conv_output_dim(w, size, stride, padding)
        .ok_or(TensorError::ShapeMismatch("pool window wider than input"))?;
    let x = input.data();
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..size {
                let iy = (oy * stride + ky) as isize - pt as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..size {
                    let ix = (ox * stride + kx) as isize - pl as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    for (m, v) in o.iter_mut().zip(&x[(iy as usize * w + ix as usize) * c..][..c]) {
                        *m = m.max(*v);
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Mean over the spatial dimensions of an `h x w x c` tensor, giving `[c]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let [h, w, c] = input.shape()[..] else {
        return Err(TensorError::ShapeMismatch("global_avg_pool input must be h x w x c"));
    };
    let mut out = vec![0.0f32; c];
    for px in input.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = (h * w) as f32;
    out.iter_mut().for_each(|v| *v /= n);
    Tensor::new(vec![c], out)
}

/// Adds a per-channel vector along the last dimension.
pub fn add_channel_bias(x: &mut Tensor, bias: &[f32]) -> Result<(), TensorError> {
    let d = x.last_dim();
    if bias.len() != d {
        return Err(TensorError::ShapeMismatch("bias length must match the last dimension"));
    }
    for row in x.data_mut().chunks_exact_mut(d) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(())
}
