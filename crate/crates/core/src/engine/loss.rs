//! Softmax label probabilities and the negative log-likelihood loss.

use super::layers::softmax_row;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `p(t) = exp(s_t) / sum_i exp(s_i)`, evaluated after subtracting the max score.
pub fn class_probabilities<T: Scalar>(scores: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); scores.len()];
    softmax_row(scores, &mut out);
    out
}

pub fn log_sum_exp<T: Scalar>(scores: &[T]) -> T {
    let max = scores.iter().cloned().fold(T::neg_infinity(), T::max);
    max + scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln()
}

/// `log(sum_i exp(s_i)) - s_tag`, i.e. `-ln p(tag)`; never negative.
pub fn nll_loss<T: Scalar>(scores: &[T], tag: usize) -> Result<T> {
    if tag >= scores.len() {
        return Err(Error::InvalidParameter(format!("tag {tag} out of range for {} classes", scores.len())));
    }
    let loss = log_sum_exp(scores) - scores[tag];
    // rounding can leave a tiny negative; NaN must pass through untouched
    Ok(if loss < T::zero() { T::zero() } else { loss })
}

/// Mean NLL over a `[batch, classes]` score tensor and the gradient of that
/// mean with respect to the scores.
pub fn softmax_nll_batch<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if scores.rank() != 2 || scores.dim(0) != labels.len() {
        return Err(Error::shape("loss", format!("[{}, classes]", labels.len()), scores.shape()));
    }
    let t = scores.dim(1);
    let b = T::lit(labels.len() as f64);
    let mut total = T::zero();
    let mut grad = Tensor::zeros(scores.shape());
    for ((row, g), &label) in scores.data().chunks_exact(t).zip(grad.data_mut().chunks_exact_mut(t)).zip(labels) {
        total += nll_loss(row, label)?;
        softmax_row(row, g);
        g[label] -= T::one();
        for v in g.iter_mut() {
            *v /= b;
        }
    }
    Ok((total / b, grad))
}
