//! Adam optimizer with bias correction.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("diverged: non-finite gradient in tensor {tensor}")]
    DivergedGradient { tensor: String },
    #[error("optimizer built for {expected} tensors, stepped with {got}")]
    SlotMismatch { expected: usize, got: usize },
}

/// First/second moment accumulators for one parameter tensor.
struct Slot<S> {
    m: Vec<S>,
    v: Vec<S>,
}

pub struct Adam<S: Scalar> {
    beta1: S,
    beta2: S,
    eps: S,
    step: u64,
    slots: Vec<Slot<S>>,
}

impl<S: Scalar> Adam<S> {
    /// Build state aligned with a fixed parameter list (one slot per tensor,
    /// in order).
    pub fn new(params: &[(&'static str, Tensor<S>)], beta1: f64, beta2: f64, eps: f64) -> Self {
        let slots = params
            .iter()
            .map(|(_, t)| Slot {
                m: vec![S::zero(); t.len()],
                v: vec![S::zero(); t.len()],
            })
            .collect();
        Adam {
            beta1: S::from_f64(beta1),
            beta2: S::from_f64(beta2),
            eps: S::from_f64(eps),
            step: 0,
            slots,
        }
    }

    /// One update over the aligned parameter list using each tensor's current
    /// gradient. Gradients are validated for finiteness first, so parameters
    /// are untouched when the step errors.
    pub fn step(
        &mut self,
        params: &[(&'static str, Tensor<S>)],
        lr: f64,
    ) -> Result<(), OptimError> {
        if params.len() != self.slots.len() {
            return Err(OptimError::SlotMismatch {
                expected: self.slots.len(),
                got: params.len(),
            });
        }
        for (name, t) in params {
            if t.grad().iter().any(|g| !g.is_finite()) {
                return Err(OptimError::DivergedGradient {
                    tensor: (*name).to_string(),
                });
            }
        }
        self.step += 1;
        let lr = S::from_f64(lr);
        let t = self.step as i32;
        let bias1 = S::one() - self.beta1.powi(t);
        let bias2 = S::one() - self.beta2.powi(t);
        for ((_, tensor), slot) in params.iter().zip(self.slots.iter_mut()) {
            tensor.update(|data, grad| {
                for i in 0..data.len() {
                    let g = grad[i];
                    slot.m[i] = self.beta1 * slot.m[i] + (S::one() - self.beta1) * g;
                    slot.v[i] = self.beta2 * slot.v[i] + (S::one() - self.beta2) * g * g;
                    let m_hat = slot.m[i] / bias1;
                    let v_hat = slot.v[i] / bias2;
                    data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> Vec<(&'static str, Tensor<f64>)> {
        vec![("p", Tensor::param(1, 1, vec![value]).unwrap())]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let params = single_param(3.5);
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        adam.step(&params, 0.1).unwrap();
        assert_eq!(params[0].1.data(), vec![3.5]);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // With constant gradient 1, bias-corrected m̂ = 1 and v̂ = 1, so the
        // first step is lr · 1/(1 + ε) ≈ lr.
        let params = single_param(1.0);
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        params[0].1.accumulate_grad(&[1.0]);
        adam.step(&params, 0.1).unwrap();
        let moved = 1.0 - params[0].1.data()[0];
        assert!((moved - 0.1).abs() < 1e-6, "step was {moved}");
    }

    #[test]
    fn nan_gradient_names_the_tensor() {
        let params = single_param(1.0);
        let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
        params[0].1.accumulate_grad(&[f64::NAN]);
        let err = adam.step(&params, 0.1).unwrap_err();
        assert!(err.to_string().contains("tensor p"), "{err}");
        // Parameter untouched on failure.
        assert_eq!(params[0].1.data(), vec![1.0]);
    }

    #[test]
    fn repeated_steps_are_deterministic() {
        let run = || {
            let params = single_param(2.0);
            let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
            for k in 0..5 {
                params[0].1.zero_grad();
                // Gradient of f(p) = (p - 1)² is 2(p - 1).
                let p = params[0].1.data()[0];
                params[0].1.accumulate_grad(&[2.0 * (p - 1.0) + 0.01 * k as f64]);
                adam.step(&params, 0.05).unwrap();
            }
            params[0].1.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
