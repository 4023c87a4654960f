use rayon::prelude::*;

use super::record::NewsRecord;
use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::{explicit_for, LoadedImage, IMAGE_FEATURE_DIM};
use crate::model::Batch;
use crate::scalar::Scalar;
use crate::text::{encode_pad, extract_text_explicit, tokenize, Lexicons, Vocabulary, TEXT_FEATURE_DIM};

/// Everything extracted from one record before fitting the encoder.
#[derive(Clone, Debug)]
pub struct RecordFeatures {
    /// Title tokens followed by body tokens.
    pub tokens: Vec<String>,
    pub text_explicit: [f64; TEXT_FEATURE_DIM],
    pub image: LoadedImage,
    pub image_explicit: [f64; IMAGE_FEATURE_DIM],
}

pub fn record_features(r: &NewsRecord, lex: &Lexicons, image_side: usize) -> Result<RecordFeatures> {
    let mut tokens = tokenize(&r.title);
    tokens.extend(tokenize(&r.text));
    let image = r.load_image(image_side);
    let image_explicit = explicit_for(&image, r.face_count).map_err(|e| Error::Data(format!("record {}: {e}", r.id)))?.to_array();
    Ok(RecordFeatures {
        tokens,
        text_explicit: extract_text_explicit(&r.title, &r.text, lex).to_array(),
        image,
        image_explicit,
    })
}

/// Feature extraction for a whole corpus, parallel across records.
pub fn extract_features(records: &[NewsRecord], lex: &Lexicons, image_side: usize) -> Result<Vec<RecordFeatures>> {
    records.par_iter().map(|r| record_features(r, lex, image_side)).collect()
}

/// Per-column z-scoring with statistics from the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; constant columns get a unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f32> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| ((v - m) / s) as f32).collect()
    }

    fn tensors(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let t = |v: &[f64]| Tensor::from_f64(&[v.len()], v).expect("non-empty");
        vec![(format!("{prefix}.mean"), t(&self.mean)), (format!("{prefix}.std"), t(&self.std))]
    }

    fn from_tensors(extra: &[(String, Tensor<f32>)], prefix: &str, dim: usize) -> Result<Self> {
        let get = |name: String| -> Result<Vec<f64>> {
            let t = extra
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != [dim] {
                return Err(Error::Checkpoint(format!("tensor `{name}` has shape {:?}, expected [{dim}]", t.shape())));
            }
            Ok(t.data().iter().map(|&v| v as f64).collect())
        };
        Ok(Standardizer {
            mean: get(format!("{prefix}.mean"))?,
            std: get(format!("{prefix}.std"))?,
        })
    }
}

const TEXT_PREFIX: &str = "standardizer.text";
const IMAGE_PREFIX: &str = "standardizer.image";

/// A model-ready example.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    /// Padded token ids, length `n`.
    pub tokens: Vec<usize>,
    pub text_explicit: Vec<f32>,
    /// `side × side × 3`, row-major.
    pub image: Vec<f32>,
    pub image_explicit: Vec<f32>,
    pub label: usize,
}

/// Turns extracted features into fixed-size model inputs.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub seq_len: usize,
    pub text: Standardizer,
    pub image: Standardizer,
}

impl Encoder {
    /// Builds the vocabulary and the standardizers from the training rows only.
    pub fn fit(features: &[RecordFeatures], train: &[usize], vocab_size: usize, seq_len: usize) -> Result<Self> {
        let docs: Vec<&[String]> = train.iter().map(|&i| features[i].tokens.as_slice()).collect();
        let docs: Vec<Vec<&String>> = docs.iter().map(|d| d.iter().collect()).collect();
        let vocab = Vocabulary::build(&docs, vocab_size)?;
        Ok(Encoder {
            vocab,
            seq_len,
            text: Standardizer::fit(train.iter().map(|&i| &features[i].text_explicit[..]), TEXT_FEATURE_DIM)?,
            image: Standardizer::fit(train.iter().map(|&i| &features[i].image_explicit[..]), IMAGE_FEATURE_DIM)?,
        })
    }

    pub fn encode(&self, f: &RecordFeatures, label: usize) -> EncodedExample {
        EncodedExample {
            tokens: encode_pad(&f.tokens, &self.vocab, self.seq_len),
            text_explicit: self.text.transform(&f.text_explicit),
            image: f.image.tensor.data.clone(),
            image_explicit: self.image.transform(&f.image_explicit),
            label,
        }
    }

    pub fn encode_all(&self, features: &[RecordFeatures], labels: &[usize], indices: &[usize]) -> Vec<EncodedExample> {
        indices.par_iter().map(|&i| self.encode(&features[i], labels[i])).collect()
    }

    /// Standardizer statistics as named tensors for the checkpoint.
    pub fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut t = self.text.tensors(TEXT_PREFIX);
        t.extend(self.image.tensors(IMAGE_PREFIX));
        t
    }

    pub fn from_checkpoint(vocab: &[String], seq_len: usize, extra: &[(String, Tensor<f32>)]) -> Result<Self> {
        Ok(Encoder {
            vocab: Vocabulary::from_tokens(vocab.to_vec())?,
            seq_len,
            text: Standardizer::from_tensors(extra, TEXT_PREFIX, TEXT_FEATURE_DIM)?,
            image: Standardizer::from_tensors(extra, IMAGE_PREFIX, IMAGE_FEATURE_DIM)?,
        })
    }
}

/// Stacks examples into batch tensors.
pub fn make_batch<T: Scalar>(examples: &[&EncodedExample]) -> Result<Batch<T>> {
    let first = examples.first().ok_or_else(|| Error::Empty("batch".into()))?;
    let b = examples.len();
    let n = first.tokens.len();
    let side = ((first.image.len() / 3) as f64).sqrt().round() as usize;
    if side * side * 3 != first.image.len() {
        return Err(Error::shape("image", "side x side x 3", first.image.len()));
    }
    let stack = |get: &dyn Fn(&EncodedExample) -> Vec<T>, shape: &[usize]| -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for e in examples {
            data.extend(get(e));
        }
        Tensor::from_vec(shape, data)
    };
    Ok(Batch {
        tokens: stack(&|e| e.tokens.iter().map(|&t| T::lit(t as f64)).collect(), &[b, n])?,
        text_explicit: stack(&|e| e.text_explicit.iter().map(|&v| T::lit(v as f64)).collect(), &[b, first.text_explicit.len()])?,
        image: stack(&|e| e.image.iter().map(|&v| T::lit(v as f64)).collect(), &[b, side, side, 3])?,
        image_explicit: stack(&|e| e.image_explicit.iter().map(|&v| T::lit(v as f64)).collect(), &[b, first.image_explicit.len()])?,
        labels: examples.iter().map(|e| e.label).collect(),
    })
}
