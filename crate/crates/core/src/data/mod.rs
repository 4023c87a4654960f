//! Corpus loading, splitting, encoding, training, evaluation, statistics,
//! and the synthetic corpus.

pub mod encode;
pub mod metrics;
pub mod record;
pub mod split;
pub mod stats;
pub mod synth;
pub mod train;

use std::path::Path;

pub use encode::{extract_features, make_batch, EncodedExample, Encoder, RecordFeatures, Standardizer};
pub use metrics::{evaluate, mean_loss, predict_probabilities, Metrics};
pub use record::{load_dataset, write_dataset, ImageSource, Label, LoadedDataset, NewsRecord};
pub use split::{split_dataset, Split};
pub use stats::{corpus_stats, ClassDiversity, StatsReport, Summary};
pub use synth::{synthetic_corpus, SynthOptions};
pub use train::{train, train_lr_baseline, EpochLog, TrainOptions, TrainOutcome, Trainer};

use crate::engine::checkpoint::Container;
use crate::error::Result;
use crate::model::{from_container, to_container, Model};
use crate::text::Lexicons;

/// A split corpus, encoded with an encoder fitted on its training part.
pub struct Prepared {
    pub encoder: Encoder,
    pub split: Split,
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    /// Share of training-split token occurrences covered by the vocabulary.
    pub coverage: f64,
}

pub fn prepare(records: &[NewsRecord], lex: &Lexicons, vocab_size: usize, seq_len: usize, image_side: usize, seed: u64) -> Result<Prepared> {
    let split = split_dataset(records, seed)?;
    let features = extract_features(records, lex, image_side)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
    let encoder = Encoder::fit(&features, &split.train, vocab_size, seq_len)?;
    let train_docs: Vec<&[String]> = split.train.iter().map(|&i| features[i].tokens.as_slice()).collect();
    Ok(Prepared {
        coverage: encoder.vocab.coverage(&train_docs),
        train: encoder.encode_all(&features, &labels, &split.train),
        validation: encoder.encode_all(&features, &labels, &split.validation),
        test: encoder.encode_all(&features, &labels, &split.test),
        encoder,
        split,
    })
}

pub fn checkpoint_container(model: &Model<f32>, encoder: &Encoder) -> Result<Container> {
    to_container(model, encoder.vocab.tokens(), &encoder.checkpoint_tensors())
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, encoder: &Encoder) -> Result<()> {
    checkpoint_container(model, encoder)?.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, Encoder)> {
    let c = Container::load(path)?;
    let (model, extra) = from_container::<f32>(&c)?;
    let encoder = Encoder::from_checkpoint(&c.vocab, model.config().seq_len, &extra)?;
    Ok((model, encoder))
}
