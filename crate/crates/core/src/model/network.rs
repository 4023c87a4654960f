use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Arch, ModelConfig};
use crate::engine::layers::{Init, LayerSpec, Sequential};
use crate::engine::loss::{class_probabilities, softmax_nll_batch};
use crate::engine::ops::{Activation, Mode};
use crate::engine::tensor::{Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Limit of the uniform init of the output layer: small enough that a fresh
/// model predicts close to (0.5, 0.5), nonzero so gradients reach the body.
const OUTPUT_INIT: f64 = 0.01;

/// A batch of encoded examples. Token ids are stored as scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[B, n]`
    pub tokens: Tensor<T>,
    /// `[B, 31]`
    pub text_explicit: Tensor<T>,
    /// `[B, S, S, 3]`
    pub image: Tensor<T>,
    /// `[B, 4]`
    pub image_explicit: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            tokens: self.tokens.cast(),
            text_explicit: self.text_explicit.cast(),
            image: self.image.cast(),
            image_explicit: self.image_explicit.cast(),
            labels: self.labels.clone(),
        }
    }
}

/// The four-subbranch network: text (explicit + latent) and image
/// (explicit + latent), each pair summed, then concatenated and classified.
#[derive(Clone, Debug)]
pub struct TiCnn<T> {
    pub text_explicit: Sequential<T>,
    pub text_latent: Sequential<T>,
    pub image_latent: Sequential<T>,
    pub image_explicit: Sequential<T>,
    pub head: Sequential<T>,
}

fn hidden_block(hidden: usize) -> Vec<(&'static str, LayerSpec)> {
    vec![("dense", LayerSpec::dense(hidden)), ("bn", LayerSpec::BatchNorm), ("relu", LayerSpec::ReLU)]
}

impl<T: Scalar> TiCnn<T> {
    fn build(c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (da, db) = c.dropout_pair;
        let h = c.hidden_dim;
        let text_explicit = Sequential::build("text.explicit", &[c.text_explicit_dim], &hidden_block(h), rng)?;

        let mut specs = vec![
            ("embedding", LayerSpec::Embedding { vocab: c.vocab_size, dim: c.embed_dim }),
            ("dropout1", LayerSpec::Dropout { keep_prob: da }),
            ("conv1", LayerSpec::Conv1D { filters: c.text_filters, height: c.text_filter_h, activation: Activation::Relu }),
            ("pool1", LayerSpec::MaxPool1D { pool: c.text_pool }),
            ("flatten", LayerSpec::Flatten),
        ];
        specs.extend(hidden_block(h));
        specs.push(("dropout2", LayerSpec::Dropout { keep_prob: db }));
        let text_latent = Sequential::build("text.latent", &[c.seq_len], &specs, rng)?;

        let labels: Vec<[String; 4]> = (1..=c.conv_layers).map(|i| [format!("conv{i}"), format!("relu{i}"), format!("dropout{i}"), format!("pool{i}")]).collect();
        let mut specs: Vec<(&str, LayerSpec)> = Vec::new();
        for l in &labels {
            specs.push((&l[0], LayerSpec::Conv2D { filters: c.conv_channels, kernel: c.image_filter, activation: Activation::Identity }));
            specs.push((&l[1], LayerSpec::ReLU));
            specs.push((&l[2], LayerSpec::Dropout { keep_prob: db }));
            specs.push((&l[3], LayerSpec::MaxPool2D { pool: c.image_pool }));
        }
        specs.push(("flatten", LayerSpec::Flatten));
        specs.extend(hidden_block(h));
        let image_latent = Sequential::build("image.latent", &[c.image_size, c.image_size, 3], &specs, rng)?;

        let image_explicit = Sequential::build("image.explicit", &[c.image_explicit_dim], &hidden_block(h), rng)?;

        let head_specs = [
            ("relu", LayerSpec::ReLU),
            ("dense", LayerSpec::dense(h)),
            ("bn", LayerSpec::BatchNorm),
            (
                "output",
                LayerSpec::Dense {
                    units: c.classes,
                    activation: Activation::Identity,
                    init: Init::Uniform(OUTPUT_INIT),
                },
            ),
        ];
        let head = Sequential::build("head", &[2 * h], &head_specs, rng)?;

        for (a, b) in [(&text_explicit, &text_latent), (&image_explicit, &image_latent)] {
            if a.output_shape() != b.output_shape() {
                return Err(Error::InvalidConfig(format!(
                    "summed subbranches `{}` {:?} and `{}` {:?} must have equal widths",
                    a.name,
                    a.output_shape(),
                    b.name,
                    b.output_shape()
                )));
            }
        }
        Ok(TiCnn {
            text_explicit,
            text_latent,
            image_latent,
            image_explicit,
            head,
        })
    }

    fn stacks(&self) -> [&Sequential<T>; 5] {
        [&self.text_explicit, &self.text_latent, &self.image_latent, &self.image_explicit, &self.head]
    }

    fn stacks_mut(&mut self) -> [&mut Sequential<T>; 5] {
        [&mut self.text_explicit, &mut self.text_latent, &mut self.image_latent, &mut self.image_explicit, &mut self.head]
    }

    fn scores(&mut self, batch: &Batch<T>, mode: Mode) -> Result<Tensor<T>> {
        let b = batch.len();
        let te = self.text_explicit.forward(&batch.text_explicit, mode)?;
        let tl = self.text_latent.forward(&batch.tokens, mode)?;
        let ie = self.image_explicit.forward(&batch.image_explicit, mode)?;
        let il = self.image_latent.forward(&batch.image, mode)?;
        for (name, t) in [("text.explicit", &te), ("text.latent", &tl), ("image.explicit", &ie), ("image.latent", &il)] {
            if t.dim(0) != b {
                return Err(Error::shape(format!("{name} batch"), b, t.dim(0)));
            }
        }
        let h = te.dim(1);
        let mut merged = Tensor::zeros(&[b, 2 * h]);
        for (i, row) in merged.data_mut().chunks_exact_mut(2 * h).enumerate() {
            let (text, image) = row.split_at_mut(h);
            for j in 0..h {
                text[j] = te.data()[i * h + j] + tl.data()[i * h + j];
                image[j] = ie.data()[i * h + j] + il.data()[i * h + j];
            }
        }
        self.head.forward(&merged, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let dm = self.head.backward(grad)?;
        let (b, h2) = (dm.dim(0), dm.dim(1));
        let h = h2 / 2;
        let mut dt = Vec::with_capacity(b * h);
        let mut di = Vec::with_capacity(b * h);
        for row in dm.data().chunks_exact(h2) {
            dt.extend_from_slice(&row[..h]);
            di.extend_from_slice(&row[h..]);
        }
        let dt = Tensor::from_vec(&[b, h], dt)?;
        let di = Tensor::from_vec(&[b, h], di)?;
        let [te, tl, il, ie, _] = self.stacks_mut();
        // the four subbranches are independent given the split gradient
        let jobs: Vec<(&mut Sequential<T>, &Tensor<T>)> = vec![(te, &dt), (tl, &dt), (il, &di), (ie, &di)];
        jobs.into_par_iter().map(|(s, g)| s.backward(g).map(|_| ())).collect::<Result<Vec<()>>>()?;
        Ok(())
    }
}

/// Single dense layer over the explicit text vector.
#[derive(Clone, Debug)]
pub struct LogisticText<T> {
    pub net: Sequential<T>,
}

impl<T: Scalar> LogisticText<T> {
    fn build(c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let specs = [(
            "dense",
            LayerSpec::Dense {
                units: c.classes,
                activation: Activation::Identity,
                init: Init::Zeros,
            },
        )];
        Ok(LogisticText {
            net: Sequential::build("logistic", &[c.text_explicit_dim], &specs, rng)?,
        })
    }
}

#[derive(Clone, Debug)]
enum Net<T> {
    TiCnn(TiCnn<T>),
    Logistic(LogisticText<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

impl ParamCount {
    pub fn non_trainable(&self) -> usize {
        self.total - self.trainable
    }
}

/// A built classifier together with its configuration.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    net: Net<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes the network; the same seed always gives the
    /// same parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match config.arch {
            Arch::Ticnn => Net::TiCnn(TiCnn::build(config, &mut rng)?),
            Arch::LogisticText => Net::Logistic(LogisticText::build(config, &mut rng)?),
        };
        Ok(Model { config: config.clone(), net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ticnn(&self) -> Option<&TiCnn<T>> {
        match &self.net {
            Net::TiCnn(t) => Some(t),
            Net::Logistic(_) => None,
        }
    }

    pub fn ticnn_mut(&mut self) -> Option<&mut TiCnn<T>> {
        match &mut self.net {
            Net::TiCnn(t) => Some(t),
            Net::Logistic(_) => None,
        }
    }

    fn stacks(&self) -> Vec<&Sequential<T>> {
        match &self.net {
            Net::TiCnn(t) => t.stacks().to_vec(),
            Net::Logistic(l) => vec![&l.net],
        }
    }

    fn stacks_mut(&mut self) -> Vec<&mut Sequential<T>> {
        match &mut self.net {
            Net::TiCnn(t) => t.stacks_mut().into_iter().collect(),
            Net::Logistic(l) => vec![&mut l.net],
        }
    }

    /// Unnormalized class scores `[B, classes]`.
    pub fn scores(&mut self, batch: &Batch<T>, mode: Mode) -> Result<Tensor<T>> {
        if batch.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        match &mut self.net {
            Net::TiCnn(t) => t.scores(batch, mode),
            Net::Logistic(l) => l.net.forward(&batch.text_explicit, mode),
        }
    }

    /// Class probabilities `[B, classes]`; each row sums to one.
    pub fn forward(&mut self, batch: &Batch<T>, mode: Mode) -> Result<Tensor<T>> {
        let scores = self.scores(batch, mode)?;
        let k = scores.dim(1);
        let data = scores.data().chunks_exact(k).flat_map(class_probabilities).collect();
        Tensor::from_vec(scores.shape(), data)
    }

    /// Backpropagates `d loss / d scores`, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        match &mut self.net {
            Net::TiCnn(t) => t.backward(grad),
            Net::Logistic(l) => l.net.backward(grad).map(|_| ()),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.value.zero_grad();
        }
    }

    /// Clears gradients, then computes the mean NLL of the batch and its gradients.
    pub fn loss_and_grad(&mut self, batch: &Batch<T>, mode: Mode) -> Result<T> {
        self.zero_grad();
        let scores = self.scores(batch, mode)?;
        let (loss, g) = softmax_nll_batch(&scores, &batch.labels)?;
        self.backward(&g)?;
        Ok(loss)
    }

    pub fn loss(&mut self, batch: &Batch<T>, mode: Mode) -> Result<T> {
        let scores = self.scores(batch, mode)?;
        Ok(softmax_nll_batch(&scores, &batch.labels)?.0)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.stacks().into_iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.stacks_mut().into_iter().flat_map(|s| s.params_mut()).collect()
    }

    pub fn param_count(&self) -> ParamCount {
        let ps = self.params();
        ParamCount {
            total: ps.iter().map(|p| p.value.len()).sum(),
            trainable: ps.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum(),
        }
    }

    pub fn is_deterministic(&self, mode: Mode) -> bool {
        self.stacks().iter().all(|s| s.is_deterministic(mode))
    }

    pub fn freeze_dropout(&mut self, frozen: bool) {
        for s in self.stacks_mut() {
            s.freeze_dropout(frozen);
        }
    }

    pub fn set_update_running_stats(&mut self, on: bool) {
        for s in self.stacks_mut() {
            s.set_update_running_stats(on);
        }
    }

    /// Restarts every dropout stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in self.stacks_mut() {
            s.reseed(&mut rng);
        }
    }

    /// Name of the first parameter whose value or gradient is not finite.
    pub fn first_non_finite(&self) -> Option<String> {
        self.params().into_iter().find_map(|p| {
            if !p.value.is_finite() {
                Some(p.name.clone())
            } else if !p.value.grad_is_finite() {
                Some(format!("{} (gradient)", p.name))
            } else {
                None
            }
        })
    }

    /// Copies parameter values into a model of another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::build(&self.config, 0).expect("config was valid");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
        }
        out
    }
}

/// Index of the larger probability; an exact tie goes to class 1 (fake).
pub fn predict_label<T: Scalar>(probabilities: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate().skip(1) {
        if p >= probabilities[best] {
            best = i;
        }
    }
    best
}
