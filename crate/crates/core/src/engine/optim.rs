use serde::{Deserialize, Serialize};

use super::tensor::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-3,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

/// RMSprop with one running mean of squared gradients per trainable element:
///
/// `v <- rho * v + (1 - rho) * g^2`, `theta <- theta - lr * g / (sqrt(v) + eps)`
#[derive(Clone, Debug)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    mean_square: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(config: RmsPropConfig) -> Result<Self> {
        if config.eps <= 0.0 || !(0.0..1.0).contains(&config.rho) || config.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!("invalid RMSprop settings {config:?}")));
        }
        Ok(RmsProp {
            config,
            mean_square: Vec::new(),
        })
    }

    pub fn state(&self) -> &[Vec<T>] {
        &self.mean_square
    }

    /// Applies one update to every trainable parameter, in order. The
    /// parameter list must be the same (same order and sizes) on every call.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        let rho = T::lit(self.config.rho);
        let one_minus = T::one() - rho;
        let lr = T::lit(self.config.learning_rate);
        let eps = T::lit(self.config.eps);
        let mut slot = 0;
        for p in params.iter_mut().filter(|p| p.trainable) {
            if self.mean_square.len() <= slot {
                self.mean_square.push(vec![T::zero(); p.value.len()]);
            }
            let v = &mut self.mean_square[slot];
            assert_eq!(v.len(), p.value.len(), "optimizer state does not match parameter {}", p.name);
            let (data, grad) = p.value.data_and_grad_mut();
            for ((theta, &g), vi) in data.iter_mut().zip(grad).zip(v.iter_mut()) {
                *vi = rho * *vi + one_minus * g * g;
                *theta -= lr * g / (vi.sqrt() + eps);
            }
            slot += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;

    fn scalar_param(v: f64) -> Param<f64> {
        Param::trainable("theta", Tensor::from_f64(&[1], &[v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = RmsProp::<f64>::new(RmsPropConfig::default()).unwrap();
        let mut p = scalar_param(1.5);
        for _ in 0..10 {
            opt.step(&mut [&mut p]);
        }
        assert_eq!(p.value.data()[0], 1.5);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        // scalar recurrence oracle, simulated independently
        let (lr, rho, eps, g) = (0.01, 0.9, 1e-8, 0.3);
        let mut v = 0.0f64;
        let mut oracle_steps = Vec::new();
        for _ in 0..200 {
            v = rho * v + (1.0 - rho) * g * g;
            oracle_steps.push(lr * g / (v.sqrt() + eps));
        }
        let mut opt = RmsProp::<f64>::new(RmsPropConfig { learning_rate: lr, rho, eps }).unwrap();
        let mut p = scalar_param(0.0);
        let mut prev = 0.0;
        for step in &oracle_steps {
            p.value.grad_mut()[0] = g;
            opt.step(&mut [&mut p]);
            let moved = prev - p.value.data()[0];
            assert!((moved - step).abs() < 1e-12);
            prev = p.value.data()[0];
        }
        assert!((oracle_steps.last().unwrap() - lr).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_loss_strictly_decreases() {
        let mut opt = RmsProp::<f64>::new(RmsPropConfig { learning_rate: 0.01, ..Default::default() }).unwrap();
        let mut p = scalar_param(1.0);
        let mut loss = 1.0;
        for _ in 0..100 {
            let theta = p.value.data()[0];
            p.value.grad_mut()[0] = 2.0 * theta;
            opt.step(&mut [&mut p]);
            let next = p.value.data()[0].powi(2);
            assert!(next < loss);
            loss = next;
        }
    }

    #[test]
    fn buffers_are_skipped_and_state_is_nonnegative() {
        let mut opt = RmsProp::<f64>::new(RmsPropConfig::default()).unwrap();
        let mut w = scalar_param(1.0);
        let mut buf = Param::buffer("running", Tensor::from_f64(&[1], &[4.0]).unwrap());
        w.value.grad_mut()[0] = -2.0;
        buf.value.grad_mut()[0] = 5.0;
        opt.step(&mut [&mut w, &mut buf]);
        assert_eq!(buf.value.data()[0], 4.0);
        assert_eq!(opt.state().len(), 1);
        assert!(opt.state()[0][0] >= 0.0);
        assert!(RmsProp::<f64>::new(RmsPropConfig { eps: 0.0, ..Default::default() }).is_err());
    }
}
