//! Finite-difference checks for every layer kind and a tiny full model,
//! all in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::{Batch, Model};
use super::ModelFragment;
use crate::engine::gradcheck::{gradient_check, Corrupted, Fragment, GradCheckOptions, GradCheckReport, Objective, SequentialFragment};
use crate::engine::layers::{LayerSpec, Sequential};
use crate::engine::ops::{Activation, Mode};
use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

pub const SUITE_LAYERS: [&str; 12] = [
    "embedding", "conv1d", "conv2d", "maxpool1d", "maxpool2d", "dense", "relu", "sigmoid", "softmax", "batchnorm", "dropout", "flatten",
];

/// Name of the end-to-end entry of the suite.
pub const SUITE_MODEL: &str = "model";

/// Factor applied to analytic gradients by the negative control.
pub const CORRUPTION: f64 = 2.0;

pub fn suite_options() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-4,
        tolerance: 1e-3,
        max_entries_per_param: None,
    }
}

/// Uniform values with magnitude in `[0.1, 1]`, away from activation kinks.
fn kink_free(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

fn layer_fragment(name: &str, rng: &mut ChaCha8Rng) -> Result<SequentialFragment<f64>> {
    let b = 3;
    let (input_shape, specs): (Vec<usize>, Vec<(&str, LayerSpec)>) = match name {
        "embedding" => (vec![5], vec![("embedding", LayerSpec::Embedding { vocab: 7, dim: 3 })]),
        "conv1d" => (vec![6, 3], vec![("conv", LayerSpec::Conv1D { filters: 2, height: 3, activation: Activation::Sigmoid })]),
        "conv2d" => (vec![5, 4, 2], vec![("conv", LayerSpec::Conv2D { filters: 3, kernel: (2, 3), activation: Activation::Identity })]),
        "maxpool1d" => (vec![7, 2], vec![("pool", LayerSpec::MaxPool1D { pool: 2 })]),
        "maxpool2d" => (vec![5, 4, 2], vec![("pool", LayerSpec::MaxPool2D { pool: (2, 2) })]),
        "dense" => (vec![4], vec![("dense", LayerSpec::dense(3))]),
        "relu" => (vec![6], vec![("relu", LayerSpec::ReLU)]),
        "sigmoid" => (vec![6], vec![("sigmoid", LayerSpec::Sigmoid)]),
        "softmax" => (vec![4], vec![("softmax", LayerSpec::Softmax)]),
        "batchnorm" => (vec![3], vec![("bn", LayerSpec::BatchNorm)]),
        "dropout" => (vec![6], vec![("dropout", LayerSpec::Dropout { keep_prob: 0.6 })]),
        "flatten" => (vec![2, 3], vec![("flatten", LayerSpec::Flatten), ("dense", LayerSpec::dense(2))]),
        other => return Err(Error::InvalidParameter(format!("unknown layer kind `{other}` (expected one of {} or {SUITE_MODEL})", SUITE_LAYERS.join(", ")))),
    };
    let mut net = Sequential::<f64>::build(name, &input_shape, &specs, rng)?;
    net.freeze_dropout(true);
    let mut full = vec![b];
    full.extend_from_slice(&input_shape);
    let embedding = name == "embedding";
    let input = if embedding {
        let n = full.iter().product();
        Tensor::from_vec(&full, (0..n).map(|_| rng.random_range(0..7) as f64).collect())?
    } else {
        kink_free(&full, rng)
    };
    let out_len: usize = b * net.output_shape().iter().product::<usize>();
    let weights = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut frag = SequentialFragment::new(net, input, Objective::WeightedSum(weights), Mode::Train);
    frag.check_input = !embedding;
    Ok(frag)
}

/// Configuration of the tiny end-to-end model: vocabulary 50, sequence 16,
/// embedding 8, hidden 8, 8×8 images.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        seq_len: 16,
        embed_dim: 8,
        text_filters: 3,
        text_filter_h: 3,
        conv_channels: 3,
        conv_layers: 2,
        image_size: 8,
        image_filter: (2, 2),
        hidden_dim: 8,
        ..Default::default()
    }
}

fn tiny_batch(c: &ModelConfig, b: usize, rng: &mut ChaCha8Rng) -> Result<Batch<f64>> {
    let n = b * c.seq_len;
    Ok(Batch {
        tokens: Tensor::from_vec(&[b, c.seq_len], (0..n).map(|_| rng.random_range(0..c.vocab_size) as f64).collect())?,
        text_explicit: kink_free(&[b, c.text_explicit_dim], rng),
        image: kink_free(&[b, c.image_size, c.image_size, 3], rng).map(|v| v.abs()),
        image_explicit: kink_free(&[b, c.image_explicit_dim], rng),
        labels: (0..b).map(|i| i % 2).collect(),
    })
}

fn run<F: Fragment<f64>>(frag: F, corrupt: bool) -> Result<GradCheckReport> {
    if corrupt {
        gradient_check(&mut Corrupted { inner: frag, factor: CORRUPTION }, suite_options())
    } else {
        let mut frag = frag;
        gradient_check(&mut frag, suite_options())
    }
}

/// Checks one entry of the suite: a layer kind from [`SUITE_LAYERS`] or
/// [`SUITE_MODEL`]. With `corrupt`, analytic gradients are doubled first.
pub fn check(name: &str, seed: u64, corrupt: bool) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if name == SUITE_MODEL {
        let c = tiny_config();
        let model = Model::<f64>::build(&c, rng.random())?;
        let batch = tiny_batch(&c, 4, &mut rng)?;
        return run(ModelFragment::new(model, batch), corrupt);
    }
    run(layer_fragment(name, &mut rng)?, corrupt)
}

/// Every layer kind followed by the tiny model.
pub fn check_all(seed: u64, corrupt: bool) -> Result<Vec<(String, GradCheckReport)>> {
    SUITE_LAYERS
        .iter()
        .chain(std::iter::once(&SUITE_MODEL))
        .map(|name| check(name, seed, corrupt).map(|r| (name.to_string(), r)))
        .collect()
}
