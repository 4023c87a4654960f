//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::Sequential;
use super::loss::softmax_nll_batch;
use super::ops::Mode;
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anything with a scalar loss and parameters that can be nudged.
pub trait Fragment<T: Scalar> {
    fn loss(&mut self) -> Result<T>;

    /// Clears gradients, runs forward and backward, and returns the loss.
    fn loss_and_grad(&mut self) -> Result<T>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Fails when repeated forward passes would not give identical losses.
    fn ensure_deterministic(&self) -> Result<()>;
}

#[derive(Clone, Debug)]
pub enum Objective<T> {
    /// `sum_i w_i * y_i` over the flattened output.
    WeightedSum(Vec<T>),
    /// Mean negative log-likelihood of softmax over `[batch, classes]` scores.
    SoftmaxNll(Vec<usize>),
}

impl<T: Scalar> Objective<T> {
    pub fn evaluate(&self, output: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        match self {
            Objective::WeightedSum(w) => {
                if w.len() != output.len() {
                    return Err(Error::shape("objective weights", output.len(), w.len()));
                }
                let loss = w.iter().zip(output.data()).map(|(&a, &b)| a * b).sum();
                Ok((loss, Tensor::from_vec(output.shape(), w.clone())?))
            }
            Objective::SoftmaxNll(labels) => softmax_nll_batch(output, labels),
        }
    }
}

/// A layer stack plus a fixed input and objective.
#[derive(Clone, Debug)]
pub struct SequentialFragment<T> {
    pub net: Sequential<T>,
    pub input: Param<T>,
    pub objective: Objective<T>,
    pub mode: Mode,
    /// Also check the gradient with respect to the input (off for token ids).
    pub check_input: bool,
}

impl<T: Scalar> SequentialFragment<T> {
    pub fn new(net: Sequential<T>, input: Tensor<T>, objective: Objective<T>, mode: Mode) -> Self {
        SequentialFragment {
            net,
            input: Param::trainable("input", input),
            objective,
            mode,
            check_input: true,
        }
    }
}

impl<T: Scalar> Fragment<T> for SequentialFragment<T> {
    fn loss(&mut self) -> Result<T> {
        let y = self.net.forward(&self.input.value, self.mode)?;
        Ok(self.objective.evaluate(&y)?.0)
    }

    fn loss_and_grad(&mut self) -> Result<T> {
        for p in self.net.params_mut() {
            p.value.zero_grad();
        }
        let y = self.net.forward(&self.input.value, self.mode)?;
        let (loss, g) = self.objective.evaluate(&y)?;
        let dx = self.net.backward(&g)?;
        self.input.value.grad_mut().copy_from_slice(dx.data());
        Ok(loss)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut ps = self.net.params_mut();
        if self.check_input {
            ps.push(&mut self.input);
        }
        ps
    }

    fn ensure_deterministic(&self) -> Result<()> {
        if self.net.is_deterministic(self.mode) {
            Ok(())
        } else {
            Err(Error::NonDeterministic(self.net.name.clone()))
        }
    }
}

/// Negative control: scales every analytic gradient by `factor`.
pub struct Corrupted<F> {
    pub inner: F,
    pub factor: f64,
}

impl<T: Scalar, F: Fragment<T>> Fragment<T> for Corrupted<F> {
    fn loss(&mut self) -> Result<T> {
        self.inner.loss()
    }

    fn loss_and_grad(&mut self) -> Result<T> {
        let l = self.inner.loss_and_grad()?;
        let f = T::lit(self.factor);
        for p in self.inner.params_mut() {
            p.value.grad_mut().iter_mut().for_each(|g| *g *= f);
        }
        Ok(l)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.inner.params_mut()
    }

    fn ensure_deterministic(&self) -> Result<()> {
        self.inner.ensure_deterministic()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-3,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
    pub pass: bool,
    pub params: Vec<ParamReport>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences
/// `(L(θ + h) - L(θ - h)) / 2h` for every entry of every trainable tensor.
pub fn gradient_check<T: Scalar, F: Fragment<T>>(fragment: &mut F, options: GradCheckOptions) -> Result<GradCheckReport> {
    fragment.ensure_deterministic()?;
    fragment.loss_and_grad()?;
    let analytic: Vec<(String, bool, Vec<T>)> = fragment
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.trainable, p.value.grad().to_vec()))
        .collect();
    let h = T::lit(options.step);
    let two_h = options.step * 2.0;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        tolerance: options.tolerance,
        pass: true,
        params: Vec::new(),
    };
    for (pi, (name, trainable, grads)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        let n = grads.len();
        let stride = options.max_entries_per_param.map_or(1, |m| n.div_ceil(m.max(1)));
        let mut pr = ParamReport {
            name: name.clone(),
            checked: 0,
            max_rel_error: 0.0,
        };
        for i in (0..n).step_by(stride) {
            let original = fragment.params_mut()[pi].value.data()[i];
            fragment.params_mut()[pi].value.data_mut()[i] = original + h;
            let plus = fragment.loss()?;
            fragment.params_mut()[pi].value.data_mut()[i] = original - h;
            let minus = fragment.loss()?;
            fragment.params_mut()[pi].value.data_mut()[i] = original;
            let numeric = (plus.as_f64() - minus.as_f64()) / two_h;
            let err = relative_error(grads[i].as_f64(), numeric);
            pr.checked += 1;
            if err > pr.max_rel_error || err.is_nan() {
                pr.max_rel_error = err;
            }
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
            }
        }
        report.checked += pr.checked;
        report.params.push(pr);
    }
    report.pass = report.max_rel_error <= options.tolerance;
    Ok(report)
}

/// Adds uniform noise in `±magnitude` so that no two inputs of a max-pool
/// window are exactly tied.
pub fn jitter<T: Scalar>(tensor: &mut Tensor<T>, magnitude: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in tensor.data_mut() {
        *v += T::lit(rng.random_range(-magnitude..=magnitude));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::layers::LayerSpec;
    use crate::engine::ops::Activation;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn weights(n: usize, seed: u64) -> Objective<f64> {
        Objective::WeightedSum(rand_tensor(&[n], seed).into_data())
    }

    #[test]
    fn dense_sigmoid_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = [("d", LayerSpec::Dense { units: 3, activation: Activation::Sigmoid, init: crate::engine::Init::Glorot })];
        let net = Sequential::build("f", &[4], &specs, &mut rng).unwrap();
        let mut frag = SequentialFragment::new(net, rand_tensor(&[2, 4], 2), weights(6, 3), Mode::Train);
        let r = gradient_check(&mut frag, GradCheckOptions { step: 1e-5, tolerance: 1e-4, ..Default::default() }).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn conv2d_pool_dense_passes_with_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let specs = [
            ("conv", LayerSpec::Conv2D { filters: 2, kernel: (2, 2), activation: Activation::Identity }),
            ("pool", LayerSpec::MaxPool2D { pool: (2, 2) }),
            ("flat", LayerSpec::Flatten),
            ("dense", LayerSpec::dense(3)),
        ];
        let net = Sequential::build("f", &[5, 5, 2], &specs, &mut rng).unwrap();
        let mut x = rand_tensor(&[2, 5, 5, 2], 5);
        jitter(&mut x, 1e-6, 6);
        let mut frag = SequentialFragment::new(net, x, Objective::SoftmaxNll(vec![0, 2]), Mode::Train);
        let r = gradient_check(&mut frag, GradCheckOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Sequential::build("f", &[4], &[("d", LayerSpec::dense(2))], &mut rng).unwrap();
        let frag = SequentialFragment::new(net, rand_tensor(&[2, 4], 2), weights(4, 3), Mode::Train);
        let mut bad = Corrupted { inner: frag, factor: 2.0 };
        let r = gradient_check(&mut bad, GradCheckOptions::default()).unwrap();
        assert!(!r.pass);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn train_mode_dropout_is_rejected_until_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = [("d", LayerSpec::dense(3)), ("drop", LayerSpec::Dropout { keep_prob: 0.5 })];
        let net = Sequential::build("f", &[4], &specs, &mut rng).unwrap();
        let mut frag = SequentialFragment::new(net, rand_tensor(&[2, 4], 2), weights(6, 3), Mode::Train);
        assert!(matches!(gradient_check(&mut frag, GradCheckOptions::default()), Err(Error::NonDeterministic(_))));
        frag.net.freeze_dropout(true);
        assert!(gradient_check(&mut frag, GradCheckOptions::default()).unwrap().pass);
    }
}
