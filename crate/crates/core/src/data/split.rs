use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::{Label, NewsRecord};
use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.8;
pub const VALIDATION_FRACTION: f64 = 0.1;
pub const MIN_SPLIT_RECORDS: usize = 10;

/// Indices into the record list for each part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified 80/10/10 split. Each class is shuffled under `seed` and cut
/// separately, so every part keeps the corpus label ratio up to rounding.
pub fn split_dataset(records: &[NewsRecord], seed: u64) -> Result<Split> {
    split_labels(&records.iter().map(|r| r.label).collect::<Vec<_>>(), seed)
}

pub fn split_labels(labels: &[Label], seed: u64) -> Result<Split> {
    if labels.len() < MIN_SPLIT_RECORDS {
        return Err(Error::Data(format!("need at least {MIN_SPLIT_RECORDS} records to split, got {}", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for class in [Label::Real, Label::Fake] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
        let n_val = ((n as f64 * VALIDATION_FRACTION).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.validation.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.shuffle(&mut rng);
    split.validation.shuffle(&mut rng);
    split.test.shuffle(&mut rng);
    Ok(split)
}
