//! Forward kernels for single samples.
//!
//! Layers call the slice-level kernels once per batch row; the `*_forward`
//! functions are the unbatched entry points used directly by callers and tests.
//! All convolutions are valid (no padding) with stride 1, and pooling windows
//! never overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_at_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Length after a valid convolution: `input - kernel + 1`.
pub fn conv_output_len(input: usize, kernel: usize) -> Option<usize> {
    if kernel == 0 || kernel > input {
        None
    } else {
        Some(input - kernel + 1)
    }
}

/// Length after non-overlapping pooling; the trailing remainder is dropped.
pub fn pool_output_len(input: usize, pool: usize) -> Option<usize> {
    if pool == 0 || pool > input {
        None
    } else {
        Some(input / pool)
    }
}

pub(crate) struct Conv2dDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub m: usize,
    pub ka: usize,
    pub kb: usize,
}

impl Conv2dDims {
    pub fn out_h(&self) -> usize {
        self.h - self.ka + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kb + 1
    }
    pub fn patch_len(&self) -> usize {
        self.ka * self.kb * self.c
    }
}

/// Pre-activation 1-D convolution of one `[n, k]` sample against `[m, h, k]`
/// filters into `[(n - h + 1), m]`. A window of `h` rows is contiguous in
/// row-major order, so each output cell is a single dot product.
pub(crate) fn conv1d_sample<T: Scalar>(x: &[T], n: usize, k: usize, filters: &[T], m: usize, h: usize, bias: &[T], out: &mut [T]) {
    let window = h * k;
    for j in 0..=(n - h) {
        let win = &x[j * k..j * k + window];
        let row = &mut out[j * m..(j + 1) * m];
        for (f, o) in row.iter_mut().enumerate() {
            *o = dot(win, &filters[f * window..(f + 1) * window]) + bias[f];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward_sample<T: Scalar>(
    x: &[T],
    n: usize,
    k: usize,
    filters: &[T],
    m: usize,
    h: usize,
    grad_pre: &[T],
    dx: &mut [T],
    dfilters: &mut [T],
    dbias: &mut [T],
) {
    let window = h * k;
    for j in 0..=(n - h) {
        let win = &x[j * k..j * k + window];
        let g = &grad_pre[j * m..(j + 1) * m];
        for (f, &gf) in g.iter().enumerate() {
            if gf == T::zero() {
                continue;
            }
            dbias[f] += gf;
            axpy(gf, win, &mut dfilters[f * window..(f + 1) * window]);
            axpy(gf, &filters[f * window..(f + 1) * window], &mut dx[j * k..j * k + window]);
        }
    }
}

fn gather_patch<T: Scalar>(x: &[T], d: &Conv2dDims, i: usize, j: usize, patch: &mut [T]) {
    let row = d.kb * d.c;
    for a in 0..d.ka {
        let start = ((i + a) * d.w + j) * d.c;
        patch[a * row..(a + 1) * row].copy_from_slice(&x[start..start + row]);
    }
}

/// Valid 2-D convolution of one `[h, w, c]` sample against `[m, ka, kb, c]`
/// filters into `[h - ka + 1, w - kb + 1, m]`.
pub(crate) fn conv2d_sample<T: Scalar>(x: &[T], d: &Conv2dDims, filters: &[T], bias: &[T], out: &mut [T], patch: &mut [T]) {
    let plen = d.patch_len();
    let (oh, ow) = (d.out_h(), d.out_w());
    for i in 0..oh {
        for j in 0..ow {
            gather_patch(x, d, i, j, patch);
            let cell = &mut out[(i * ow + j) * d.m..(i * ow + j + 1) * d.m];
            for (f, o) in cell.iter_mut().enumerate() {
                *o = dot(patch, &filters[f * plen..(f + 1) * plen]) + bias[f];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_sample<T: Scalar>(
    x: &[T],
    d: &Conv2dDims,
    filters: &[T],
    grad_out: &[T],
    dx: &mut [T],
    dfilters: &mut [T],
    dbias: &mut [T],
    patch: &mut [T],
    dpatch: &mut [T],
) {
    let plen = d.patch_len();
    let row = d.kb * d.c;
    let (oh, ow) = (d.out_h(), d.out_w());
    for i in 0..oh {
        for j in 0..ow {
            let g = &grad_out[(i * ow + j) * d.m..(i * ow + j + 1) * d.m];
            if g.iter().all(|&v| v == T::zero()) {
                continue;
            }
            gather_patch(x, d, i, j, patch);
            dpatch.fill(T::zero());
            for (f, &gf) in g.iter().enumerate() {
                if gf == T::zero() {
                    continue;
                }
                dbias[f] += gf;
                axpy(gf, patch, &mut dfilters[f * plen..(f + 1) * plen]);
                axpy(gf, &filters[f * plen..(f + 1) * plen], dpatch);
            }
            for a in 0..d.ka {
                let start = ((i + a) * d.w + j) * d.c;
                for (dst, &src) in dx[start..start + row].iter_mut().zip(&dpatch[a * row..(a + 1) * row]) {
                    *dst += src;
                }
            }
        }
    }
}

/// Max over non-overlapping windows along the first axis of `[len, c]`.
/// `argmax` receives the flat source index of every output cell.
pub(crate) fn maxpool1d_sample<T: Scalar>(x: &[T], len: usize, c: usize, pool: usize, out: &mut [T], argmax: &mut [usize]) {
    for o in 0..len / pool {
        for ch in 0..c {
            let mut best = o * pool * c + ch;
            for p in 1..pool {
                let idx = (o * pool + p) * c + ch;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out[o * c + ch] = x[best];
            argmax[o * c + ch] = best;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool2d_sample<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
    pa: usize,
    pb: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (oh, ow) = (h / pa, w / pb);
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best = ((i * pa) * w + j * pb) * c + ch;
                for a in 0..pa {
                    for b in 0..pb {
                        let idx = ((i * pa + a) * w + j * pb + b) * c + ch;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (i * ow + j) * c + ch;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

pub fn conv1d_forward<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>, bias: &Tensor<T>, activation: Activation) -> Result<Tensor<T>> {
    if input.rank() != 2 || filters.rank() != 3 {
        return Err(Error::shape("conv1d", "input [n, k] and filters [m, h, k]", (input.shape(), filters.shape())));
    }
    let (n, k) = (input.dim(0), input.dim(1));
    let (m, h, fk) = (filters.dim(0), filters.dim(1), filters.dim(2));
    if fk != k {
        return Err(Error::shape("conv1d filter width", k, fk));
    }
    bias.expect_shape("conv1d bias", &[m])?;
    let len = conv_output_len(n, h).ok_or_else(|| Error::shape("conv1d", format!("sequence length >= {h}"), n))?;
    let mut out = Tensor::zeros(&[len, m]);
    conv1d_sample(input.data(), n, k, filters.data(), m, h, bias.data(), out.data_mut());
    for v in out.data_mut() {
        *v = activation.apply(*v);
    }
    Ok(out)
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 3 || filters.rank() != 4 {
        return Err(Error::shape("conv2d", "input [h, w, c] and filters [m, ka, kb, c]", (input.shape(), filters.shape())));
    }
    let d = Conv2dDims {
        h: input.dim(0),
        w: input.dim(1),
        c: input.dim(2),
        m: filters.dim(0),
        ka: filters.dim(1),
        kb: filters.dim(2),
    };
    if filters.dim(3) != d.c {
        return Err(Error::shape("conv2d channels", d.c, filters.dim(3)));
    }
    bias.expect_shape("conv2d bias", &[d.m])?;
    if d.ka > d.h || d.kb > d.w {
        return Err(Error::shape("conv2d", format!("spatial extent >= ({}, {})", d.ka, d.kb), (d.h, d.w)));
    }
    let mut out = Tensor::zeros(&[d.out_h(), d.out_w(), d.m]);
    let mut patch = vec![T::zero(); d.patch_len()];
    conv2d_sample(input.data(), &d, filters.data(), bias.data(), out.data_mut(), &mut patch);
    Ok(out)
}

/// 1-D max pooling over `[len]` or `[len, c]`.
pub fn maxpool1d_forward<T: Scalar>(input: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    let (len, c) = match input.shape() {
        [l] => (*l, 1),
        [l, c] => (*l, *c),
        s => return Err(Error::shape("maxpool1d", "[len] or [len, c]", s)),
    };
    let out_len = pool_output_len(len, pool).ok_or_else(|| Error::shape("maxpool1d", format!("extent >= pool {pool}"), len))?;
    let shape: Vec<usize> = if input.rank() == 1 { vec![out_len] } else { vec![out_len, c] };
    let mut out = Tensor::zeros(&shape);
    let mut arg = vec![0; out_len * c];
    maxpool1d_sample(input.data(), len, c, pool, out.data_mut(), &mut arg);
    Ok(out)
}

/// 2-D max pooling over `[h, w]` or `[h, w, c]`.
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>, pool: (usize, usize)) -> Result<Tensor<T>> {
    let (h, w, c) = match input.shape() {
        [h, w] => (*h, *w, 1),
        [h, w, c] => (*h, *w, *c),
        s => return Err(Error::shape("maxpool2d", "[h, w] or [h, w, c]", s)),
    };
    let oh = pool_output_len(h, pool.0);
    let ow = pool_output_len(w, pool.1);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::shape("maxpool2d", format!("extent >= pool {pool:?}"), (h, w)));
    };
    let shape: Vec<usize> = if input.rank() == 2 { vec![oh, ow] } else { vec![oh, ow, c] };
    let mut out = Tensor::zeros(&shape);
    let mut arg = vec![0; oh * ow * c];
    maxpool2d_sample(input.data(), h, w, c, pool.0, pool.1, out.data_mut(), &mut arg);
    Ok(out)
}

pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, activation: Activation) -> Result<Tensor<T>> {
    if weights.rank() != 2 || input.rank() != 1 || weights.dim(1) != input.dim(0) {
        return Err(Error::shape("dense", format!("weights [d_out, {}]", input.len()), weights.shape()));
    }
    let d_out = weights.dim(0);
    bias.expect_shape("dense bias", &[d_out])?;
    let x = input.data();
    let data = (0..d_out)
        .map(|o| activation.apply(dot(&weights.data()[o * x.len()..(o + 1) * x.len()], x) + bias.data()[o]))
        .collect();
    Tensor::from_vec(&[d_out], data)
}

pub fn embedding_forward<T: Scalar>(indices: &[usize], table: &Tensor<T>) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(Error::shape("embedding table", "[vocab, dim]", table.shape()));
    }
    if indices.is_empty() {
        return Err(Error::Empty("token sequence".into()));
    }
    let (v, k) = (table.dim(0), table.dim(1));
    let mut out = Vec::with_capacity(indices.len() * k);
    for (position, &idx) in indices.iter().enumerate() {
        if idx >= v {
            return Err(Error::IndexOutOfRange {
                row: 0,
                position,
                index: idx as f64,
                vocab_size: v,
            });
        }
        out.extend_from_slice(&table.data()[idx * k..(idx + 1) * k]);
    }
    Tensor::from_vec(&[indices.len(), k], out)
}

/// Classic dropout: a Bernoulli(`keep_prob`) mask during training, and a
/// deterministic scaling by `keep_prob` at evaluation time.
pub fn dropout_apply<T: Scalar>(input: &Tensor<T>, keep_prob: f64, mode: Mode, seed: u64) -> Result<Tensor<T>> {
    check_keep_prob(keep_prob)?;
    Ok(match mode {
        Mode::Eval => {
            let p = T::lit(keep_prob);
            input.map(|v| v * p)
        }
        Mode::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = input.clone();
            out.zero_grad();
            for v in out.data_mut() {
                if !rng.random_bool(keep_prob) {
                    *v = T::zero();
                }
            }
            out
        }
    })
}

pub(crate) fn check_keep_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dropout keep probability must lie in (0, 1), got {p}")))
    }
}
