//! Central finite-difference verification of tape gradients.

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{KernelError, Tensor};

/// Compare analytic gradients of a scalar-valued tensor program against
/// central finite differences, entry by entry over every tensor in `inputs`.
///
/// Returns the maximum of |analytic − numeric| / max(1, |numeric|). The
/// program is re-run from a fresh tape for every perturbation, so it must be
/// a pure function of the input tensors' current values. `eps` must lie in
/// [1e-7, 1e-3].
pub fn grad_check<S, F>(mut f: F, inputs: &[Tensor<S>], eps: S) -> Result<S, KernelError>
where
    S: Scalar,
    F: FnMut(&mut Tape<S>) -> Result<Tensor<S>, KernelError>,
{
    let lo = S::from_f64(1e-7);
    let hi = S::from_f64(1e-3);
    if !(eps >= lo && eps <= hi) {
        return Err(KernelError::contract(
            "grad_check",
            format!("eps {eps} outside [1e-7, 1e-3]"),
        ));
    }

    for t in inputs {
        t.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape)?;
    if loss.rows() != 1 || loss.cols() != 1 {
        return Err(KernelError::NotScalar {
            op: "grad_check",
            shape: loss.shape(),
        });
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<S>> = inputs.iter().map(Tensor::grad).collect();

    let eval = |f: &mut F| -> Result<S, KernelError> {
        let mut tape = Tape::new();
        let out = f(&mut tape)?;
        if out.rows() != 1 || out.cols() != 1 {
            return Err(KernelError::NotScalar {
                op: "grad_check",
                shape: out.shape(),
            });
        }
        Ok(out.data()[0])
    };

    let two = S::from_f64(2.0);
    let mut max_rel = S::zero();
    for (tensor, grads) in inputs.iter().zip(&analytic) {
        for (idx, &g) in grads.iter().enumerate() {
            tensor.nudge(idx, eps);
            let plus = eval(&mut f)?;
            tensor.nudge(idx, -(two * eps));
            let minus = eval(&mut f)?;
            tensor.nudge(idx, eps);
            let numeric = (plus - minus) / (two * eps);
            let rel = (g - numeric).abs() / S::one().max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        Tensor::param(rows, cols, data).unwrap()
    }

    /// Random values in [-2, 2] kept away from the relu kink so the central
    /// difference stays valid.
    fn random_tensor_off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| loop {
                let v: f64 = rng.random_range(-2.0..2.0);
                if v.abs() > 1e-2 {
                    break v;
                }
            })
            .collect();
        Tensor::param(rows, cols, data).unwrap()
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::param(2, 3, vec![0.5; 6]).unwrap();
        let err = grad_check(
            |tape| {
                let s = tape.sum_all(&x)?;
                Ok(s)
            },
            &[x.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "max rel err {err}");
        assert!(x.grad().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn eps_outside_range_is_rejected() {
        let x = Tensor::param(1, 1, vec![1.0]).unwrap();
        assert!(grad_check(|tape| tape.sum_all(&x), &[x.clone()], 1e-2).is_err());
    }

    #[test]
    fn non_scalar_program_is_a_contract_error() {
        let x = Tensor::param(1, 2, vec![1.0, 2.0]).unwrap();
        let err = grad_check(|tape| tape.relu(&x), &[x.clone()], 1e-5).unwrap_err();
        assert!(matches!(err, KernelError::NotScalar { .. }));
    }

    #[test]
    fn corrupted_backward_is_caught() {
        // Simulate an op whose backward is wrong by a factor of two: the
        // analytic pass (first call) sees f(x) = sum(x) while every
        // finite-difference evaluation sees f(x) = sum(2x). The checker must
        // report the mismatch, |1 - 2| / max(1, 2) = 0.5.
        let x = Tensor::param(1, 3, vec![0.4, -1.1, 0.9]).unwrap();
        let calls = Cell::new(0u32);
        let err = grad_check(
            |tape| {
                let factor = if calls.get() == 0 { 1.0 } else { 2.0 };
                calls.set(calls.get() + 1);
                let scaled = tape.scale(&x, factor)?;
                tape.sum_all(&scaled)
            },
            &[x.clone()],
            1e-5,
        )
        .unwrap();
        assert!((err - 0.5_f64).abs() < 1e-6, "expected ≈0.5, got {err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let tol = 1e-6;
        let eps = 1e-5;

        // matmul
        let a = random_tensor(&mut rng, 3, 4);
        let b = random_tensor(&mut rng, 4, 2);
        let w = random_tensor(&mut rng, 3, 2);
        let err = grad_check(
            |tape| {
                let p = tape.matmul(&a, &b)?;
                let m = tape.mul(&p, &w)?;
                tape.sum_all(&m)
            },
            &[a.clone(), b.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "matmul: {err}");

        // add / sub / mul
        let x = random_tensor(&mut rng, 2, 3);
        let y = random_tensor(&mut rng, 2, 3);
        let w = random_tensor(&mut rng, 2, 3);
        let err = grad_check(
            |tape| {
                let s = tape.add(&x, &y)?;
                let d = tape.sub(&s, &y)?;
                let m = tape.mul(&d, &y)?;
                let weighted = tape.mul(&m, &w)?;
                tape.sum_all(&weighted)
            },
            &[x.clone(), y.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "add/sub/mul: {err}");

        // relu, away from the kink
        let x = random_tensor_off_kink(&mut rng, 2, 4);
        let w = random_tensor(&mut rng, 2, 4);
        let err = grad_check(
            |tape| {
                let r = tape.relu(&x)?;
                let m = tape.mul(&r, &w)?;
                tape.sum_all(&m)
            },
            &[x.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "relu: {err}");

        // tanh at the fixture from the op contract
        let x = Tensor::param(1, 2, vec![0.3, -0.7]).unwrap();
        let err = grad_check(
            |tape| {
                let t = tape.tanh(&x)?;
                tape.sum_all(&t)
            },
            &[x.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "tanh: {err}");

        // scale
        let x = random_tensor(&mut rng, 3, 3);
        let err = grad_check(
            |tape| {
                let s = tape.scale(&x, -1.7)?;
                tape.sum_all(&s)
            },
            &[x.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "scale: {err}");

        // add_bias_row
        let x = random_tensor(&mut rng, 3, 2);
        let bias = random_tensor(&mut rng, 1, 2);
        let w = random_tensor(&mut rng, 3, 2);
        let err = grad_check(
            |tape| {
                let s = tape.add_bias_row(&x, &bias)?;
                let m = tape.mul(&s, &w)?;
                tape.sum_all(&m)
            },
            &[x.clone(), bias.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "add_bias_row: {err}");

        // row_softmax Jacobian-vector products, including the op-contract point
        let x = Tensor::param(1, 3, vec![0.2, 1.1, -0.4]).unwrap();
        let w = random_tensor(&mut rng, 1, 3);
        let err = grad_check(
            |tape| {
                let sm = tape.row_softmax(&x)?;
                let m = tape.mul(&sm, &w)?;
                tape.sum_all(&m)
            },
            &[x.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "row_softmax: {err}");

        // mean_rows
        let x = random_tensor(&mut rng, 4, 3);
        let w = random_tensor(&mut rng, 1, 3);
        let err = grad_check(
            |tape| {
                let m = tape.mean_rows(&x)?;
                let weighted = tape.mul(&m, &w)?;
                tape.sum_all(&weighted)
            },
            &[x.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "mean_rows: {err}");

        // gather_rows + replace_rows
        let x = random_tensor(&mut rng, 4, 3);
        let token = random_tensor(&mut rng, 1, 3);
        let w = random_tensor(&mut rng, 2, 3);
        let err = grad_check(
            |tape| {
                let masked = tape.replace_rows(&x, &[0, 2], &token)?;
                let picked = tape.gather_rows(&masked, &[2, 3])?;
                let m = tape.mul(&picked, &w)?;
                tape.sum_all(&m)
            },
            &[x.clone(), token.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "gather/replace rows: {err}");

        // concat_rows / concat_cols
        let a = random_tensor(&mut rng, 2, 2);
        let b = random_tensor(&mut rng, 1, 2);
        let c = random_tensor(&mut rng, 3, 1);
        let w = random_tensor(&mut rng, 3, 3);
        let err = grad_check(
            |tape| {
                let stack = tape.concat_rows(&[a.clone(), b.clone()])?;
                let wide = tape.concat_cols(&[stack, c.clone()])?;
                let m = tape.mul(&wide, &w)?;
                tape.sum_all(&m)
            },
            &[a.clone(), b.clone(), c.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "concat: {err}");

        // cross_entropy_logits
        let logits = random_tensor(&mut rng, 3, 4);
        let err = grad_check(
            |tape| tape.cross_entropy_logits(&logits, &[2, 0, 3]),
            &[logits.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "cross_entropy_logits: {err}");

        // uniformity
        let m = random_tensor(&mut rng, 4, 3);
        let err = grad_check(|tape| tape.uniformity(&m, 2.0), &[m.clone()], eps).unwrap();
        assert!(err <= tol, "uniformity: {err}");

        // row_l2_normalize feeding the uniformity kernel
        let m = random_tensor(&mut rng, 4, 3);
        let err = grad_check(
            |tape| {
                let unit = tape.row_l2_normalize(&m)?;
                tape.uniformity(&unit, 2.0)
            },
            &[m.clone()],
            eps,
        )
        .unwrap();
        assert!(err <= tol, "row_l2_normalize: {err}");
    }
}
