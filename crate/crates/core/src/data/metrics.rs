use serde::{Deserialize, Serialize};

use super::encode::{make_batch, EncodedExample};
use crate::engine::ops::Mode;
use crate::error::{Error, Result};
use crate::model::{predict_label, Model, FAKE};
use crate::scalar::Scalar;

/// Evaluation batch size; only affects speed.
const EVAL_BATCH: usize = 64;

/// Precision, recall and F1 with fake as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Metrics {
            precision,
            recall,
            f1,
            accuracy: div(tp + tn, tp + fp + fn_ + tn),
            tp,
            fp,
            fn_,
            tn,
        }
    }

    /// From `(predicted, actual)` class indices.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred == FAKE, actual == FAKE) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        if tp + fp + fn_ + tn == 0 {
            return Err(Error::Empty("evaluation set".into()));
        }
        Ok(Self::from_counts(tp, fp, fn_, tn))
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Eval-mode class probabilities, one row per example.
pub fn predict_probabilities<T: Scalar>(model: &mut Model<T>, examples: &[EncodedExample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let p = model.forward(&make_batch(&refs)?, Mode::Eval)?;
        let k = p.dim(1);
        out.extend(p.data().chunks_exact(k).map(|r| r.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

/// Mean eval-mode NLL.
pub fn mean_loss<T: Scalar>(model: &mut Model<T>, examples: &[EncodedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        total += model.loss(&make_batch(&refs)?, Mode::Eval)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

pub fn evaluate<T: Scalar>(model: &mut Model<T>, examples: &[EncodedExample]) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let probs = predict_probabilities(model, examples)?;
    Metrics::from_predictions(probs.iter().zip(examples).map(|(p, e)| (predict_label(p), e.label)))
}
