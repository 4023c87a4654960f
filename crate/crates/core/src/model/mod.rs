//! The multimodal classifier: configuration, the four-subbranch network,
//! the logistic baseline, and persistence.

mod config;
mod network;
pub mod suite;

pub use config::{Arch, ModelConfig};
pub use network::{predict_label, Batch, LogisticText, Model, ParamCount, TiCnn};

use std::collections::HashSet;

use crate::engine::checkpoint::Container;
use crate::engine::gradcheck::Fragment;
use crate::engine::ops::Mode;
use crate::engine::tensor::{Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const REAL: usize = 0;
pub const FAKE: usize = 1;

/// Packs parameters (as `f32`), the config, `extra` named tensors and the
/// vocabulary into a checkpoint container.
pub fn to_container<T: Scalar>(model: &Model<T>, vocab: &[String], extra: &[(String, Tensor<f32>)]) -> Result<Container> {
    let mut tensors: Vec<(String, Tensor<f32>)> = model.params().into_iter().map(|p| (p.name.clone(), p.value.cast())).collect();
    tensors.extend(extra.iter().cloned());
    let mut seen = HashSet::new();
    for (name, _) in &tensors {
        if !seen.insert(name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name `{name}`")));
        }
    }
    Ok(Container {
        config_json: serde_json::to_string(model.config())?,
        tensors,
        vocab: vocab.to_vec(),
    })
}

/// Rebuilds a model from a container. Returns the tensors that are not
/// model parameters alongside it.
pub fn from_container<T: Scalar>(c: &Container) -> Result<(Model<T>, Vec<(String, Tensor<f32>)>)> {
    let config: ModelConfig = serde_json::from_str(&c.config_json)
        .map_err(|e| Error::Checkpoint(format!("incompatible model configuration in checkpoint: {e}")))?;
    let mut model = Model::<T>::build(&config, 0)?;
    if config.arch == Arch::Ticnn && c.vocab.len() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens but the model expects {}",
            c.vocab.len(),
            config.vocab_size
        )));
    }
    let mut used = HashSet::new();
    for p in model.params_mut() {
        let t = c.tensor(&p.name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?}, model expects {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.cast();
        used.insert(p.name.clone());
    }
    let extra = c.tensors.iter().filter(|(n, _)| !used.contains(n)).cloned().collect();
    Ok((model, extra))
}

/// A model with a fixed batch, for finite-difference checks. Dropout masks
/// are frozen and batch-norm running statistics are left untouched.
pub struct ModelFragment<T> {
    pub model: Model<T>,
    pub batch: Batch<T>,
}

impl<T: Scalar> ModelFragment<T> {
    pub fn new(mut model: Model<T>, batch: Batch<T>) -> Self {
        model.freeze_dropout(true);
        model.set_update_running_stats(false);
        ModelFragment { model, batch }
    }
}

impl<T: Scalar> Fragment<T> for ModelFragment<T> {
    fn loss(&mut self) -> Result<T> {
        self.model.loss(&self.batch, Mode::Train)
    }

    fn loss_and_grad(&mut self) -> Result<T> {
        self.model.loss_and_grad(&self.batch, Mode::Train)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.model.params_mut()
    }

    fn ensure_deterministic(&self) -> Result<()> {
        if self.model.is_deterministic(Mode::Train) {
            Ok(())
        } else {
            Err(Error::NonDeterministic("model".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::suite::tiny_config;
    use super::*;
    use crate::engine::gradcheck::{gradient_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_config(hidden: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            seq_len: 8,
            embed_dim: 4,
            text_filters: 2,
            text_filter_h: 3,
            conv_channels: 2,
            conv_layers: 1,
            image_size: 8,
            image_filter: (3, 3),
            hidden_dim: hidden,
            ..Default::default()
        }
    }

    fn random_batch<T: Scalar>(c: &ModelConfig, b: usize, seed: u64) -> Batch<T> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |shape: &[usize], lo: f64, hi: f64| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| T::lit(r.random_range(lo..hi))).collect()).unwrap()
        };
        let text_explicit = t(&[b, c.text_explicit_dim], -1.0, 1.0);
        let image = t(&[b, c.image_size, c.image_size, 3], 0.0, 1.0);
        let image_explicit = t(&[b, c.image_explicit_dim], -1.0, 1.0);
        let mut r = ChaCha8Rng::seed_from_u64(seed + 1);
        let tokens = Tensor::from_vec(
            &[b, c.seq_len],
            (0..b * c.seq_len).map(|_| T::lit(r.random_range(0..c.vocab_size) as f64)).collect(),
        )
        .unwrap();
        Batch {
            tokens,
            text_explicit,
            image,
            image_explicit,
            labels: (0..b).map(|i| i % 2).collect(),
        }
    }

    #[test]
    fn probabilities_rows_sum_to_one_and_start_near_half() {
        let c = tiny_config();
        let mut m = Model::<f32>::build(&c, 3).unwrap();
        let batch = random_batch(&c, 5, 1);
        for mode in [Mode::Train, Mode::Eval] {
            let p = m.forward(&batch, mode).unwrap();
            assert_eq!(p.shape(), &[5, 2]);
            for row in p.data().chunks(2) {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
                assert!((row[0] - 0.5).abs() < 0.2);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let c = tiny_config();
        let a = Model::<f32>::build(&c, 9).unwrap();
        let b = Model::<f32>::build(&c, 9).unwrap();
        let d = Model::<f32>::build(&c, 10).unwrap();
        let bits = |m: &Model<f32>| m.params().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&d));
    }

    #[test]
    fn parameter_names_are_unique_and_hierarchical() {
        let m = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
        let names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        let set: HashSet<&str> = names.iter().copied().collect();
        assert_eq!(set.len(), names.len());
        for expected in ["text.latent.conv1.filters", "text.latent.embedding.table", "image.latent.conv3.bias", "image.explicit.bn.running_var", "head.output.weights"] {
            assert!(set.contains(expected), "{expected}");
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let c = tiny_config();
        let mut m = Model::<f32>::build(&c, 3).unwrap();
        let batch = random_batch(&c, 4, 2);
        let a = m.forward(&batch, Mode::Eval).unwrap();
        let b = m.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors_name_the_subbranch() {
        let c = tiny_config();
        let mut m = Model::<f32>::build(&c, 3).unwrap();
        let mut batch = random_batch::<f32>(&c, 3, 2);
        batch.image = Tensor::zeros(&[3, 9, 9, 3]);
        let err = m.forward(&batch, Mode::Eval).unwrap_err().to_string();
        assert!(err.contains("image.latent"), "{err}");
        let mut batch = random_batch::<f32>(&c, 3, 2);
        batch.text_explicit = Tensor::zeros(&[3, 30]);
        assert!(m.forward(&batch, Mode::Eval).unwrap_err().to_string().contains("text.explicit"));
    }

    #[test]
    fn hand_counted_parameters() {
        let m = Model::<f32>::build(&toy_config(4), 0).unwrap();
        // text.explicit: dense 31*4+4, bn 4+4 (+8 running)
        // text.latent: embedding 10*4, conv 2*3*4+2, pooled length 3 -> dense 6*4+4, bn 8
        // image.latent: conv 2*3*3*3+2, 8 -> 6 -> 3, dense 18*4+4, bn 8
        // image.explicit: dense 4*4+4, bn 8
        // head: dense 8*4+4, bn 8, output 4*2+2
        let trainable = (124 + 4 + 8) + (40 + 26 + 28 + 8) + (56 + 76 + 8) + (20 + 8) + (36 + 8 + 10);
        let count = m.param_count();
        assert_eq!(count.trainable, trainable);
        assert_eq!(count.non_trainable(), 5 * 8);
        assert_eq!(count.total, 500);
    }

    #[test]
    fn hidden_width_delta_matches_closed_form() {
        // every term that depends on the hidden width h
        let f = |h: usize| (31 + 1 + 2 + 2) * h + (6 + 1 + 2 + 2) * h + (18 + 1 + 2 + 2) * h + (4 + 1 + 2 + 2) * h + (2 * h * h + h + 4 * h) + 2 * h;
        for h in [4, 8] {
            let a = Model::<f32>::build(&toy_config(h), 0).unwrap().param_count().total;
            let b = Model::<f32>::build(&toy_config(2 * h), 0).unwrap().param_count().total;
            assert_eq!(b - a, f(2 * h) - f(h));
        }
    }

    #[test]
    fn predict_label_rule() {
        assert_eq!(predict_label(&[0.9, 0.1]), REAL);
        assert_eq!(predict_label(&[0.2, 0.8]), FAKE);
        assert_eq!(predict_label(&[0.5, 0.5]), FAKE);
    }

    #[test]
    fn every_trainable_tensor_receives_gradient() {
        let c = tiny_config();
        let mut m = Model::<f64>::build(&c, 4).unwrap();
        m.loss_and_grad(&random_batch(&c, 6, 5), Mode::Train).unwrap();
        for p in m.params().iter().filter(|p| p.trainable) {
            assert!(p.value.grad().iter().any(|&g| g != 0.0), "{} has no gradient", p.name);
        }
    }

    #[test]
    fn ablated_image_path_ignores_pixels() {
        let c = tiny_config();
        let mut m = Model::<f32>::build(&c, 4).unwrap();
        let t = m.ticnn_mut().unwrap();
        for p in t.image_latent.params_mut().into_iter().filter(|p| p.name.ends_with("dense.weights")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut batch = random_batch::<f32>(&c, 3, 2);
        batch.image_explicit = Tensor::zeros(&[3, 4]);
        let a = m.forward(&batch, Mode::Eval).unwrap();
        batch.image.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        assert_eq!(a, m.forward(&batch, Mode::Eval).unwrap());
    }

    #[test]
    fn tiny_model_gradient_check() {
        let c = tiny_config();
        let m = Model::<f64>::build(&c, 11).unwrap();
        let mut frag = ModelFragment::new(m, random_batch(&c, 4, 12));
        let r = gradient_check(&mut frag, GradCheckOptions { step: 1e-4, ..Default::default() }).unwrap();
        assert!(r.pass, "{} at {}", r.max_rel_error, r.worst);
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = tiny_config();
        let mut m = Model::<f32>::build(&c, 5).unwrap();
        let vocab: Vec<String> = (0..c.vocab_size).map(|i| format!("t{i}")).collect();
        let extra = vec![("standardizer.text.mean".to_string(), Tensor::filled(&[31], 0.5f32))];
        let bytes = to_container(&m, &vocab, &extra).unwrap().to_bytes().unwrap();
        let back = Container::read_from(&mut bytes.as_slice()).unwrap();
        let (mut m2, extra2) = from_container::<f32>(&back).unwrap();
        assert_eq!(extra2, extra);
        let batch = random_batch(&c, 3, 1);
        assert_eq!(m.forward(&batch, Mode::Eval).unwrap(), m2.forward(&batch, Mode::Eval).unwrap());

        let mut short = back.clone();
        short.vocab.pop();
        assert!(from_container::<f32>(&short).is_err());
        let mut wrong = back;
        wrong.config_json = wrong.config_json.replace("\"hidden_dim\":8", "\"hidden_dim\":9");
        assert!(matches!(from_container::<f32>(&wrong), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn logistic_baseline_starts_uniform() {
        let c = ModelConfig::logistic_text();
        let mut m = Model::<f32>::build(&c, 0).unwrap();
        assert_eq!(m.param_count().total, 31 * 2 + 2);
        let batch = random_batch(&tiny_config(), 4, 3);
        assert!(m.forward(&batch, Mode::Eval).unwrap().data().iter().all(|&p| p == 0.5));
    }
}
