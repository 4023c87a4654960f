//! Batched layers with explicit forward/backward passes.
//!
//! Every layer takes a tensor whose leading axis is the batch. Forward caches
//! whatever the backward pass needs; backward accumulates parameter gradients
//! into the parameters' `grad` buffers and returns the gradient with respect
//! to the layer input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{self, check_keep_prob, conv_output_len, pool_output_len, Activation, Conv2dDims, Mode};
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Uniform(f64),
    Zeros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Embedding,
    Conv1D,
    Conv2D,
    MaxPool1D,
    MaxPool2D,
    Dense,
    ReLU,
    Sigmoid,
    Softmax,
    BatchNorm,
    Dropout,
    Flatten,
}

/// Declarative description of one layer; shapes of the parameters are
/// inferred from the per-sample input shape when the layer is built.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Embedding { vocab: usize, dim: usize },
    Conv1D { filters: usize, height: usize, activation: Activation },
    Conv2D { filters: usize, kernel: (usize, usize), activation: Activation },
    MaxPool1D { pool: usize },
    MaxPool2D { pool: (usize, usize) },
    Dense { units: usize, activation: Activation, init: Init },
    ReLU,
    Sigmoid,
    Softmax,
    BatchNorm,
    Dropout { keep_prob: f64 },
    Flatten,
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense {
            units,
            activation: Activation::Identity,
            init: Init::Glorot,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Embedding { .. } => LayerKind::Embedding,
            LayerSpec::Conv1D { .. } => LayerKind::Conv1D,
            LayerSpec::Conv2D { .. } => LayerKind::Conv2D,
            LayerSpec::MaxPool1D { .. } => LayerKind::MaxPool1D,
            LayerSpec::MaxPool2D { .. } => LayerKind::MaxPool2D,
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::ReLU => LayerKind::ReLU,
            LayerSpec::Sigmoid => LayerKind::Sigmoid,
            LayerSpec::Softmax => LayerKind::Softmax,
            LayerSpec::BatchNorm => LayerKind::BatchNorm,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Flatten => LayerKind::Flatten,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Error::shape(format!("{:?}", self.kind()), what.to_string(), input);
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::InvalidParameter(format!("{what} must be >= 1")))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Embedding { vocab, dim } => {
                positive(vocab, "embedding vocabulary")?;
                positive(dim, "embedding dimension")?;
                match input {
                    [n] => Ok(vec![*n, dim]),
                    _ => Err(bad("[seq_len]")),
                }
            }
            LayerSpec::Conv1D { filters, height, .. } => {
                positive(filters, "filter count")?;
                positive(height, "filter height")?;
                match input {
                    [n, k] => {
                        let len = conv_output_len(*n, height).ok_or_else(|| bad("sequence length >= filter height"))?;
                        let _ = k;
                        Ok(vec![len, filters])
                    }
                    _ => Err(bad("[seq_len, dim]")),
                }
            }
            LayerSpec::Conv2D { filters, kernel, .. } => {
                positive(filters, "filter count")?;
                positive(kernel.0, "kernel height")?;
                positive(kernel.1, "kernel width")?;
                match input {
                    [h, w, _] => {
                        let oh = conv_output_len(*h, kernel.0);
                        let ow = conv_output_len(*w, kernel.1);
                        match (oh, ow) {
                            (Some(oh), Some(ow)) => Ok(vec![oh, ow, filters]),
                            _ => Err(bad("spatial extent >= kernel")),
                        }
                    }
                    _ => Err(bad("[h, w, c]")),
                }
            }
            LayerSpec::MaxPool1D { pool } => {
                positive(pool, "pool size")?;
                match input {
                    [l, c] => Ok(vec![pool_output_len(*l, pool).ok_or_else(|| bad("extent >= pool"))?, *c]),
                    _ => Err(bad("[len, channels]")),
                }
            }
            LayerSpec::MaxPool2D { pool } => {
                positive(pool.0, "pool height")?;
                positive(pool.1, "pool width")?;
                match input {
                    [h, w, c] => {
                        let oh = pool_output_len(*h, pool.0);
                        let ow = pool_output_len(*w, pool.1);
                        match (oh, ow) {
                            (Some(oh), Some(ow)) => Ok(vec![oh, ow, *c]),
                            _ => Err(bad("extent >= pool")),
                        }
                    }
                    _ => Err(bad("[h, w, c]")),
                }
            }
            LayerSpec::Dense { units, .. } => {
                positive(units, "unit count")?;
                match input {
                    [_] => Ok(vec![units]),
                    _ => Err(bad("[features]")),
                }
            }
            LayerSpec::BatchNorm => match input {
                [f] => Ok(vec![*f]),
                _ => Err(bad("[features]")),
            },
            LayerSpec::Dropout { keep_prob } => {
                check_keep_prob(keep_prob)?;
                Ok(input.to_vec())
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn build<T: Scalar>(&self, name: &str, input: &[usize], rng: &mut ChaCha8Rng) -> Result<Layer<T>> {
        self.output_shape(input)?;
        Ok(match *self {
            LayerSpec::Embedding { vocab, dim } => Layer::Embedding(Embedding {
                table: Param::trainable(format!("{name}.table"), uniform(&[vocab, dim], 0.05, rng)),
                cache: None,
            }),
            LayerSpec::Conv1D { filters, height, activation } => {
                let k = input[1];
                let fan_in = height * k;
                let fan_out = height * filters;
                Layer::Conv1D(Conv1D {
                    filters: Param::trainable(format!("{name}.filters"), glorot(&[filters, height, k], fan_in, fan_out, rng)),
                    bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[filters])),
                    activation,
                    cache: None,
                })
            }
            LayerSpec::Conv2D { filters, kernel, activation } => {
                let c = input[2];
                let fan_in = kernel.0 * kernel.1 * c;
                let fan_out = kernel.0 * kernel.1 * filters;
                Layer::Conv2D(Conv2D {
                    filters: Param::trainable(
                        format!("{name}.filters"),
                        glorot(&[filters, kernel.0, kernel.1, c], fan_in, fan_out, rng),
                    ),
                    bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[filters])),
                    activation,
                    cache: None,
                })
            }
            LayerSpec::MaxPool1D { pool } => Layer::MaxPool1D(MaxPool1D { pool, cache: None }),
            LayerSpec::MaxPool2D { pool } => Layer::MaxPool2D(MaxPool2D { pool, cache: None }),
            LayerSpec::Dense { units, activation, init } => {
                let d_in = input[0];
                let weights = match init {
                    Init::Glorot => glorot(&[units, d_in], d_in, units, rng),
                    Init::Uniform(limit) => uniform(&[units, d_in], limit, rng),
                    Init::Zeros => Tensor::zeros(&[units, d_in]),
                };
                Layer::Dense(Dense {
                    weights: Param::trainable(format!("{name}.weights"), weights),
                    bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[units])),
                    activation,
                    cache: None,
                })
            }
            LayerSpec::ReLU => Layer::Activation(ActivationLayer::new(Activation::Relu)),
            LayerSpec::Sigmoid => Layer::Activation(ActivationLayer::new(Activation::Sigmoid)),
            LayerSpec::Softmax => Layer::Softmax(Softmax { cache: None }),
            LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(name, input[0])),
            LayerSpec::Dropout { keep_prob } => Layer::Dropout(Dropout::new(keep_prob, rng.random())),
            LayerSpec::Flatten => Layer::Flatten(Flatten { cache: None }),
        })
    }
}

fn uniform<T: Scalar>(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-limit..=limit))).collect();
    Tensor::from_vec(shape, data).expect("shape validated by LayerSpec")
}

fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

fn batch_of<T: Scalar>(input: &Tensor<T>, context: &str, sample: &[usize]) -> Result<usize> {
    if input.rank() != sample.len() + 1 || &input.shape()[1..] != sample {
        return Err(Error::shape(context, format!("[batch, {sample:?}]"), input.shape()));
    }
    Ok(input.dim(0))
}

#[derive(Clone, Debug)]
pub struct Embedding<T> {
    pub table: Param<T>,
    cache: Option<(Vec<usize>, usize)>,
}

impl<T: Scalar> Embedding<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.rank() != 2 {
            return Err(Error::shape("embedding", "[batch, seq_len]", input.shape()));
        }
        let (b, n) = (input.dim(0), input.dim(1));
        let (v, k) = (self.table.value.dim(0), self.table.value.dim(1));
        let mut indices = Vec::with_capacity(b * n);
        for (i, &raw) in input.data().iter().enumerate() {
            let f = raw.as_f64();
            if f < 0.0 || f.fract() != 0.0 || f >= v as f64 {
                return Err(Error::IndexOutOfRange {
                    row: i / n,
                    position: i % n,
                    index: f,
                    vocab_size: v,
                });
            }
            indices.push(f as usize);
        }
        let table = self.table.value.data();
        let mut out = Tensor::zeros(&[b, n, k]);
        for (dst, &idx) in out.data_mut().chunks_exact_mut(k).zip(&indices) {
            dst.copy_from_slice(&table[idx * k..(idx + 1) * k]);
        }
        self.cache = Some((indices, n));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (indices, n) = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("embedding".into()))?;
        let k = self.table.value.dim(1);
        let b = indices.len() / n;
        grad.expect_shape("embedding backward", &[b, *n, k])?;
        let tg = self.table.value.grad_mut();
        for (g, &idx) in grad.data().chunks_exact(k).zip(indices) {
            for (dst, &src) in tg[idx * k..(idx + 1) * k].iter_mut().zip(g) {
                *dst += src;
            }
        }
        // token ids are not differentiable
        Ok(Tensor::zeros(&[b, *n]))
    }
}

#[derive(Clone, Debug)]
pub struct Conv1D<T> {
    pub filters: Param<T>,
    pub bias: Param<T>,
    pub activation: Activation,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> Conv1D<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, h, k) = (self.filters.value.dim(0), self.filters.value.dim(1), self.filters.value.dim(2));
        if input.rank() != 3 || input.dim(2) != k {
            return Err(Error::shape("conv1d", format!("[batch, seq_len, {k}]"), input.shape()));
        }
        let (b, n) = (input.dim(0), input.dim(1));
        let len = conv_output_len(n, h).ok_or_else(|| Error::shape("conv1d", format!("seq_len >= {h}"), n))?;
        let mut out = Tensor::zeros(&[b, len, m]);
        let filters = self.filters.value.data();
        let bias = self.bias.value.data();
        let act = self.activation;
        out.data_mut()
            .par_chunks_mut(len * m)
            .zip(input.data().par_chunks(n * k))
            .for_each(|(o, x)| {
                ops::conv1d_sample(x, n, k, filters, m, h, bias, o);
                for v in o.iter_mut() {
                    *v = act.apply(*v);
                }
            });
        self.cache = Some((input.clone(), out.data().to_vec()));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (input, output) = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("conv1d".into()))?;
        let (m, h, k) = (self.filters.value.dim(0), self.filters.value.dim(1), self.filters.value.dim(2));
        let (b, n) = (input.dim(0), input.dim(1));
        let len = n - h + 1;
        grad.expect_shape("conv1d backward", &[b, len, m])?;
        let act = self.activation;
        let grad_pre: Vec<T> = grad
            .data()
            .iter()
            .zip(output)
            .map(|(&g, &y)| g * act.derivative_at_output(y))
            .collect();
        let filters = self.filters.value.data();
        let mut dx = Tensor::zeros(input.shape());
        let partials: Vec<(Vec<T>, Vec<T>)> = dx
            .data_mut()
            .par_chunks_mut(n * k)
            .zip(input.data().par_chunks(n * k))
            .zip(grad_pre.par_chunks(len * m))
            .map(|((dxs, xs), gs)| {
                let mut df = vec![T::zero(); filters.len()];
                let mut db = vec![T::zero(); m];
                ops::conv1d_backward_sample(xs, n, k, filters, m, h, gs, dxs, &mut df, &mut db);
                (df, db)
            })
            .collect();
        for (df, db) in &partials {
            axpy(T::one(), df, self.filters.value.grad_mut());
            axpy(T::one(), db, self.bias.value.grad_mut());
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2D<T> {
    pub filters: Param<T>,
    pub bias: Param<T>,
    pub activation: Activation,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> Conv2D<T> {
    fn dims(&self, input: &Tensor<T>) -> Result<Conv2dDims> {
        let f = &self.filters.value;
        if input.rank() != 4 || input.dim(3) != f.dim(3) {
            return Err(Error::shape("conv2d", format!("[batch, h, w, {}]", f.dim(3)), input.shape()));
        }
        let d = Conv2dDims {
            h: input.dim(1),
            w: input.dim(2),
            c: input.dim(3),
            m: f.dim(0),
            ka: f.dim(1),
            kb: f.dim(2),
        };
        if d.ka > d.h || d.kb > d.w {
            return Err(Error::shape("conv2d", format!("spatial extent >= ({}, {})", d.ka, d.kb), (d.h, d.w)));
        }
        Ok(d)
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.dims(input)?;
        let b = input.dim(0);
        let (oh, ow) = (d.out_h(), d.out_w());
        let mut out = Tensor::zeros(&[b, oh, ow, d.m]);
        let filters = self.filters.value.data();
        let bias = self.bias.value.data();
        let act = self.activation;
        out.data_mut()
            .par_chunks_mut(oh * ow * d.m)
            .zip(input.data().par_chunks(d.h * d.w * d.c))
            .for_each(|(o, x)| {
                let mut patch = vec![T::zero(); d.patch_len()];
                ops::conv2d_sample(x, &d, filters, bias, o, &mut patch);
                if act != Activation::Identity {
                    for v in o.iter_mut() {
                        *v = act.apply(*v);
                    }
                }
            });
        self.cache = Some((input.clone(), if act == Activation::Identity { Vec::new() } else { out.data().to_vec() }));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (input, output) = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("conv2d".into()))?;
        let d = self.dims(input)?;
        let b = input.dim(0);
        let out_len = d.out_h() * d.out_w() * d.m;
        grad.expect_shape("conv2d backward", &[b, d.out_h(), d.out_w(), d.m])?;
        let act = self.activation;
        let grad_pre: Vec<T> = if act == Activation::Identity {
            grad.data().to_vec()
        } else {
            grad.data().iter().zip(output).map(|(&g, &y)| g * act.derivative_at_output(y)).collect()
        };
        let filters = self.filters.value.data();
        let in_len = d.h * d.w * d.c;
        let mut dx = Tensor::zeros(input.shape());
        let partials: Vec<(Vec<T>, Vec<T>)> = dx
            .data_mut()
            .par_chunks_mut(in_len)
            .zip(input.data().par_chunks(in_len))
            .zip(grad_pre.par_chunks(out_len))
            .map(|((dxs, xs), gs)| {
                let mut df = vec![T::zero(); filters.len()];
                let mut db = vec![T::zero(); d.m];
                let mut patch = vec![T::zero(); d.patch_len()];
                let mut dpatch = vec![T::zero(); d.patch_len()];
                ops::conv2d_backward_sample(xs, &d, filters, gs, dxs, &mut df, &mut db, &mut patch, &mut dpatch);
                (df, db)
            })
            .collect();
        for (df, db) in &partials {
            axpy(T::one(), df, self.filters.value.grad_mut());
            axpy(T::one(), db, self.bias.value.grad_mut());
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool1D {
    pub pool: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1D {
    fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.rank() != 3 {
            return Err(Error::shape("maxpool1d", "[batch, len, channels]", input.shape()));
        }
        let (b, l, c) = (input.dim(0), input.dim(1), input.dim(2));
        let ol = pool_output_len(l, self.pool).ok_or_else(|| Error::shape("maxpool1d", format!("len >= {}", self.pool), l))?;
        let mut out = Tensor::zeros(&[b, ol, c]);
        let mut arg = vec![0usize; b * ol * c];
        for ((o, a), x) in out.data_mut().chunks_exact_mut(ol * c).zip(arg.chunks_exact_mut(ol * c)).zip(input.data().chunks_exact(l * c)) {
            ops::maxpool1d_sample(x, l, c, self.pool, o, a);
        }
        self.cache = Some((arg, input.shape().to_vec()));
        Ok(out)
    }

    fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("maxpool1d".into()))?;
        route_max_grad(grad, arg, shape, "maxpool1d backward")
    }
}

fn route_max_grad<T: Scalar>(grad: &Tensor<T>, arg: &[usize], in_shape: &[usize], context: &str) -> Result<Tensor<T>> {
    if grad.len() != arg.len() {
        return Err(Error::shape(context, arg.len(), grad.len()));
    }
    let mut dx = Tensor::zeros(in_shape);
    let b = in_shape[0];
    let in_stride = dx.len() / b;
    let out_stride = arg.len() / b;
    let dxd = dx.data_mut();
    for (i, (&g, &a)) in grad.data().iter().zip(arg).enumerate() {
        dxd[(i / out_stride) * in_stride + a] += g;
    }
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct MaxPool2D {
    pub pool: (usize, usize),
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2D {
    fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.rank() != 4 {
            return Err(Error::shape("maxpool2d", "[batch, h, w, c]", input.shape()));
        }
        let (b, h, w, c) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let (pa, pb) = self.pool;
        let (Some(oh), Some(ow)) = (pool_output_len(h, pa), pool_output_len(w, pb)) else {
            return Err(Error::shape("maxpool2d", format!("extent >= {:?}", self.pool), (h, w)));
        };
        let mut out = Tensor::zeros(&[b, oh, ow, c]);
        let mut arg = vec![0usize; b * oh * ow * c];
        let os = oh * ow * c;
        for ((o, a), x) in out.data_mut().chunks_exact_mut(os).zip(arg.chunks_exact_mut(os)).zip(input.data().chunks_exact(h * w * c)) {
            ops::maxpool2d_sample(x, h, w, c, pa, pb, o, a);
        }
        self.cache = Some((arg, input.shape().to_vec()));
        Ok(out)
    }

    fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("maxpool2d".into()))?;
        route_max_grad(grad, arg, shape, "maxpool2d backward")
    }
}

#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weights: Param<T>,
    pub bias: Param<T>,
    pub activation: Activation,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> Dense<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (d_out, d_in) = (self.weights.value.dim(0), self.weights.value.dim(1));
        let b = batch_of(input, "dense", &[d_in])?;
        let w = self.weights.value.data();
        let bias = self.bias.value.data();
        let act = self.activation;
        let mut out = Tensor::zeros(&[b, d_out]);
        out.data_mut()
            .par_chunks_mut(d_out)
            .zip(input.data().par_chunks(d_in))
            .for_each(|(o, x)| {
                for (j, v) in o.iter_mut().enumerate() {
                    *v = act.apply(dot(&w[j * d_in..(j + 1) * d_in], x) + bias[j]);
                }
            });
        self.cache = Some((input.clone(), out.data().to_vec()));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (input, output) = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("dense".into()))?;
        let (d_out, d_in) = (self.weights.value.dim(0), self.weights.value.dim(1));
        let b = input.dim(0);
        grad.expect_shape("dense backward", &[b, d_out])?;
        let act = self.activation;
        let gpre: Vec<T> = grad.data().iter().zip(output).map(|(&g, &y)| g * act.derivative_at_output(y)).collect();
        let mut dx = Tensor::zeros(input.shape());
        {
            let w = self.weights.value.data();
            dx.data_mut().par_chunks_mut(d_in).zip(gpre.par_chunks(d_out)).for_each(|(dxs, gs)| {
                for (j, &g) in gs.iter().enumerate() {
                    if g != T::zero() {
                        axpy(g, &w[j * d_in..(j + 1) * d_in], dxs);
                    }
                }
            });
        }
        let wg = self.weights.value.grad_mut();
        wg.par_chunks_mut(d_in).enumerate().for_each(|(j, row)| {
            for s in 0..b {
                let g = gpre[s * d_out + j];
                if g != T::zero() {
                    axpy(g, &input.data()[s * d_in..(s + 1) * d_in], row);
                }
            }
        });
        let bg = self.bias.value.grad_mut();
        for s in 0..b {
            for j in 0..d_out {
                bg[j] += gpre[s * d_out + j];
            }
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
pub struct ActivationLayer<T> {
    pub activation: Activation,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ActivationLayer<T> {
    fn new(activation: Activation) -> Self {
        ActivationLayer { activation, cache: None }
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let act = self.activation;
        let out = input.map(|v| act.apply(v));
        self.cache = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward(format!("{:?}", self.activation)))?;
        grad.expect_shape("activation backward", out.shape())?;
        let act = self.activation;
        let data = grad.data().iter().zip(out.data()).map(|(&g, &y)| g * act.derivative_at_output(y)).collect();
        Tensor::from_vec(out.shape(), data)
    }
}

/// Row-wise softmax over the last axis.
#[derive(Clone, Debug)]
pub struct Softmax<T> {
    cache: Option<Tensor<T>>,
}

pub(crate) fn softmax_row<T: Scalar>(scores: &[T], out: &mut [T]) {
    let max = scores.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl<T: Scalar> Softmax<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let t = *input.shape().last().unwrap();
        let mut out = Tensor::zeros(input.shape());
        for (o, x) in out.data_mut().chunks_exact_mut(t).zip(input.data().chunks_exact(t)) {
            softmax_row(x, o);
        }
        self.cache = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("softmax".into()))?;
        grad.expect_shape("softmax backward", y.shape())?;
        let t = *y.shape().last().unwrap();
        let mut dx = Tensor::zeros(y.shape());
        for ((d, g), yr) in dx.data_mut().chunks_exact_mut(t).zip(grad.data().chunks_exact(t)).zip(y.data().chunks_exact(t)) {
            let s = dot(g, yr);
            for i in 0..t {
                d[i] = yr[i] * (g[i] - s);
            }
        }
        Ok(dx)
    }
}

pub const BATCHNORM_MOMENTUM: f64 = 0.99;
pub const BATCHNORM_EPS: f64 = 1e-5;

/// Batch normalization over `[batch, features]`.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    update_running: bool,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
    batch: usize,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, features: usize) -> Self {
        BatchNorm {
            gamma: Param::trainable(format!("{name}.gamma"), Tensor::filled(&[features], T::one())),
            beta: Param::trainable(format!("{name}.beta"), Tensor::zeros(&[features])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[features])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::filled(&[features], T::one())),
            momentum: BATCHNORM_MOMENTUM,
            eps: BATCHNORM_EPS,
            update_running: true,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn set_update_running(&mut self, on: bool) {
        self.update_running = on;
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let f = self.features();
        let b = batch_of(input, "batchnorm", &[f])?;
        let eps = T::lit(self.eps);
        let x = input.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::BatchTooSmall(b));
                }
                let bt = T::lit(b as f64);
                let mut mean = vec![T::zero(); f];
                for row in x.chunks_exact(f) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= bt);
                let mut var = vec![T::zero(); f];
                for row in x.chunks_exact(f) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= bt);
                if self.update_running {
                    let mom = T::lit(self.momentum);
                    let one_minus = T::one() - mom;
                    for i in 0..f {
                        let rm = &mut self.running_mean.value.data_mut()[i];
                        *rm = mom * *rm + one_minus * mean[i];
                        let rv = &mut self.running_var.value.data_mut()[i];
                        *rv = mom * *rv + one_minus * var[i];
                    }
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.value.data().to_vec(), self.running_var.value.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = Tensor::zeros(input.shape());
        for ((row, xh), o) in x.chunks_exact(f).zip(xhat.chunks_exact_mut(f)).zip(out.data_mut().chunks_exact_mut(f)) {
            for i in 0..f {
                xh[i] = (row[i] - mean[i]) * inv_std[i];
                o[i] = gamma[i] * xh[i] + beta[i];
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, mode, batch: b });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("batchnorm".into()))?;
        let f = self.features();
        let b = cache.batch;
        grad.expect_shape("batchnorm backward", &[b, f])?;
        let g = grad.data();
        let mut sum_g = vec![T::zero(); f];
        let mut sum_gx = vec![T::zero(); f];
        for (gr, xr) in g.chunks_exact(f).zip(cache.xhat.chunks_exact(f)) {
            for i in 0..f {
                sum_g[i] += gr[i];
                sum_gx[i] += gr[i] * xr[i];
            }
        }
        let gamma = self.gamma.value.data().to_vec();
        let mut dx = Tensor::zeros(&[b, f]);
        match cache.mode {
            Mode::Train => {
                let bt = T::lit(b as f64);
                for ((d, gr), xr) in dx.data_mut().chunks_exact_mut(f).zip(g.chunks_exact(f)).zip(cache.xhat.chunks_exact(f)) {
                    for i in 0..f {
                        d[i] = gamma[i] * cache.inv_std[i] / bt * (bt * gr[i] - sum_g[i] - xr[i] * sum_gx[i]);
                    }
                }
            }
            Mode::Eval => {
                for (d, gr) in dx.data_mut().chunks_exact_mut(f).zip(g.chunks_exact(f)) {
                    for i in 0..f {
                        d[i] = gamma[i] * cache.inv_std[i] * gr[i];
                    }
                }
            }
        }
        for i in 0..f {
            self.gamma.value.grad_mut()[i] += sum_gx[i];
            self.beta.value.grad_mut()[i] += sum_g[i];
        }
        Ok(dx)
    }
}

/// Classic dropout with a keep probability `p`: Bernoulli(p) masking during
/// training, scaling by `p` at evaluation.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    pub keep_prob: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<T>>,
    frozen: bool,
    last_mode: Option<Mode>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(keep_prob: f64, seed: u64) -> Self {
        Dropout {
            keep_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            frozen: false,
            last_mode: None,
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.mask = None;
    }

    /// Reuse the most recent mask on subsequent train-mode passes.
    pub fn freeze_mask(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_deterministic(&self, mode: Mode) -> bool {
        mode == Mode::Eval || self.frozen
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.last_mode = Some(mode);
        match mode {
            Mode::Eval => {
                let p = T::lit(self.keep_prob);
                Ok(input.map(|v| v * p))
            }
            Mode::Train => {
                let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.len() == input.len());
                if !reuse {
                    let p = self.keep_prob;
                    let rng = &mut self.rng;
                    self.mask = Some(
                        (0..input.len())
                            .map(|_| if rng.random_bool(p) { T::one() } else { T::zero() })
                            .collect(),
                    );
                }
                let mask = self.mask.as_ref().unwrap();
                let data = input.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
                Tensor::from_vec(input.shape(), data)
            }
        }
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self.last_mode.ok_or_else(|| Error::BackwardBeforeForward("dropout".into()))? {
            Mode::Eval => {
                let p = T::lit(self.keep_prob);
                Ok(grad.map(|v| v * p))
            }
            Mode::Train => {
                let mask = self.mask.as_ref().ok_or_else(|| Error::BackwardBeforeForward("dropout".into()))?;
                if mask.len() != grad.len() {
                    return Err(Error::shape("dropout backward", mask.len(), grad.len()));
                }
                let data = grad.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(grad.shape(), data)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let b = input.dim(0);
        self.cache = Some(input.shape().to_vec());
        input.clone().reshape(&[b, input.len() / b])
    }

    fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.as_ref().ok_or_else(|| Error::BackwardBeforeForward("flatten".into()))?;
        grad.clone().reshape(shape)
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Embedding(Embedding<T>),
    Conv1D(Conv1D<T>),
    Conv2D(Conv2D<T>),
    MaxPool1D(MaxPool1D),
    MaxPool2D(MaxPool2D),
    Dense(Dense<T>),
    Activation(ActivationLayer<T>),
    Softmax(Softmax<T>),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout<T>),
    Flatten(Flatten),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Embedding(_) => LayerKind::Embedding,
            Layer::Conv1D(_) => LayerKind::Conv1D,
            Layer::Conv2D(_) => LayerKind::Conv2D,
            Layer::MaxPool1D(_) => LayerKind::MaxPool1D,
            Layer::MaxPool2D(_) => LayerKind::MaxPool2D,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Activation(a) => match a.activation {
                Activation::Sigmoid => LayerKind::Sigmoid,
                _ => LayerKind::ReLU,
            },
            Layer::Softmax(_) => LayerKind::Softmax,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Flatten(_) => LayerKind::Flatten,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Embedding(l) => l.forward(input),
            Layer::Conv1D(l) => l.forward(input),
            Layer::Conv2D(l) => l.forward(input),
            Layer::MaxPool1D(l) => l.forward(input),
            Layer::MaxPool2D(l) => l.forward(input),
            Layer::Dense(l) => l.forward(input),
            Layer::Activation(l) => l.forward(input),
            Layer::Softmax(l) => l.forward(input),
            Layer::BatchNorm(l) => l.forward(input, mode),
            Layer::Dropout(l) => l.forward(input, mode),
            Layer::Flatten(l) => l.forward(input),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Embedding(l) => l.backward(grad),
            Layer::Conv1D(l) => l.backward(grad),
            Layer::Conv2D(l) => l.backward(grad),
            Layer::MaxPool1D(l) => l.backward(grad),
            Layer::MaxPool2D(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
            Layer::Activation(l) => l.backward(grad),
            Layer::Softmax(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Embedding(l) => vec![&l.table],
            Layer::Conv1D(l) => vec![&l.filters, &l.bias],
            Layer::Conv2D(l) => vec![&l.filters, &l.bias],
            Layer::Dense(l) => vec![&l.weights, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Embedding(l) => vec![&mut l.table],
            Layer::Conv1D(l) => vec![&mut l.filters, &mut l.bias],
            Layer::Conv2D(l) => vec![&mut l.filters, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn is_deterministic(&self, mode: Mode) -> bool {
        match self {
            Layer::Dropout(d) => d.is_deterministic(mode),
            _ => true,
        }
    }
}

/// A named stack of layers applied in order.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    pub name: String,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    /// Builds a stack for per-sample inputs of `input_shape`. Layer `i` is
    /// named `{name}.{label_i}` and its parameters `{name}.{label_i}.{param}`.
    pub fn build(name: &str, input_shape: &[usize], specs: &[(&str, LayerSpec)], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (label, spec) in specs {
            let full = format!("{name}.{label}");
            let layer = spec.build(&full, &shape, rng).map_err(|e| e.within(&full))?;
            shape = spec.output_shape(&shape)?;
            layers.push(layer);
        }
        Ok(Sequential {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        batch_of(input, &self.name, &self.input_shape.clone())?;
        let mut x = std::borrow::Cow::Borrowed(input);
        for layer in &mut self.layers {
            x = std::borrow::Cow::Owned(layer.forward(&x, mode).map_err(|e| e.within(&self.name))?);
        }
        Ok(x.into_owned())
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = std::borrow::Cow::Borrowed(grad);
        for layer in self.layers.iter_mut().rev() {
            g = std::borrow::Cow::Owned(layer.backward(&g).map_err(|e| e.within(&self.name))?);
        }
        Ok(g.into_owned())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn is_deterministic(&self, mode: Mode) -> bool {
        self.layers.iter().all(|l| l.is_deterministic(mode))
    }

    pub fn freeze_dropout(&mut self, frozen: bool) {
        for l in &mut self.layers {
            if let Layer::Dropout(d) = l {
                d.freeze_mask(frozen);
            }
        }
    }

    pub fn set_update_running_stats(&mut self, on: bool) {
        for l in &mut self.layers {
            if let Layer::BatchNorm(bn) = l {
                bn.set_update_running(on);
            }
        }
    }

    /// Reseeds each dropout layer from a stream derived from `seed`.
    pub fn reseed(&mut self, rng: &mut ChaCha8Rng) {
        for l in &mut self.layers {
            if let Layer::Dropout(d) = l {
                d.reseed(rng.random());
            }
        }
    }
}
