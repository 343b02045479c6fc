//! The four loss terms and their weighted combination.
//!
//! All losses are built on the tape so one backward pass reaches every
//! parameter. rec1/rec2/sup are nonnegative; uniformity is ≤ 0 and equals 0
//! only when all event representations coincide.

use thiserror::Error;

use crate::graph::MaskPlan;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{KernelError, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("rec2: empty mask set")]
    EmptyMask,
    #[error("negative loss weight {name} = {value}")]
    NegativeWeight { name: &'static str, value: f64 },
}

/// Scalar values of one loss evaluation, for logging. `total` always equals
/// `l_sup + alpha1·(l_rec1 + l_rec2) + alpha2·l_uni` with absent terms as 0.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_rec1: f64,
    pub l_rec2: f64,
    pub l_uni: f64,
    pub total: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Mean squared error of the crossed local reconstructions: z_p (decoded from
/// parents) against the child features and z_c (decoded from children)
/// against the parent features, each averaged over all N_p·d entries.
pub fn rec1_loss<S: Scalar>(
    tape: &mut Tape<S>,
    x_p: &Tensor<S>,
    x_c: &Tensor<S>,
    z_p: &Tensor<S>,
    z_c: &Tensor<S>,
) -> Result<Tensor<S>, LossError> {
    let n_p = x_p.rows();
    let d = x_p.cols();
    let diff_td = tape.sub(x_c, z_p)?;
    let sq_td = tape.mul(&diff_td, &diff_td)?;
    let sum_td = tape.sum_all(&sq_td)?;
    let diff_bu = tape.sub(x_p, z_c)?;
    let sq_bu = tape.mul(&diff_bu, &diff_bu)?;
    let sum_bu = tape.sum_all(&sq_bu)?;
    let total = tape.add(&sum_td, &sum_bu)?;
    let scale = S::one() / S::from_f64((n_p * d) as f64);
    Ok(tape.scale(&total, scale)?)
}

/// Mean squared error over the masked rows only; unmasked rows cannot affect
/// the value or the gradient.
pub fn rec2_loss<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    z: &Tensor<S>,
    plan: &MaskPlan,
) -> Result<Tensor<S>, LossError> {
    if plan.masked_indices.is_empty() {
        return Err(LossError::EmptyMask);
    }
    let n_m = plan.count();
    let d = x.cols();
    let x_masked = tape.gather_rows(x, &plan.masked_indices)?;
    let z_masked = tape.gather_rows(z, &plan.masked_indices)?;
    let diff = tape.sub(&x_masked, &z_masked)?;
    let sq = tape.mul(&diff, &diff)?;
    let sum = tape.sum_all(&sq)?;
    let scale = S::one() / S::from_f64((n_m * d) as f64);
    Ok(tape.scale(&sum, scale)?)
}

/// Mean cross-entropy of one-hot labels against row-softmax of the logits.
/// Consumes logits through a fused log-sum-exp path for stability.
pub fn sup_loss<S: Scalar>(
    tape: &mut Tape<S>,
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<Tensor<S>, LossError> {
    Ok(tape.cross_entropy_logits(logits, labels)?)
}

/// Log of the average pairwise Gaussian potential over the rows of `m`
/// (unordered distinct pairs within the batch). Returns `None` with a
/// warning when the batch has fewer than two representations, in which case
/// the term contributes 0.
pub fn uniformity_loss<S: Scalar>(
    tape: &mut Tape<S>,
    m: &Tensor<S>,
    t: S,
) -> Result<Option<Tensor<S>>, LossError> {
    if m.rows() < 2 {
        eprintln!(
            "warning: uniformity loss skipped: batch of {} representation(s) has no pairs",
            m.rows()
        );
        return Ok(None);
    }
    Ok(Some(tape.uniformity(m, t)?))
}

/// Loss terms present in one batch. Ablation variants omit terms entirely
/// (a `None` term is never executed, not merely zero-weighted).
pub struct LossTerms<S: Scalar> {
    pub sup: Tensor<S>,
    pub rec1: Option<Tensor<S>>,
    pub rec2: Option<Tensor<S>>,
    pub uni: Option<Tensor<S>>,
}

/// Weighted combination `sup + alpha1·(rec1 + rec2) + alpha2·uni` on the
/// tape, plus the scalar breakdown for logging.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    terms: &LossTerms<S>,
    alpha1: f64,
    alpha2: f64,
) -> Result<(Tensor<S>, LossBreakdown), LossError> {
    if alpha1 < 0.0 {
        return Err(LossError::NegativeWeight {
            name: "alpha1",
            value: alpha1,
        });
    }
    if alpha2 < 0.0 {
        return Err(LossError::NegativeWeight {
            name: "alpha2",
            value: alpha2,
        });
    }
    let mut total = terms.sup.clone();
    let rec_terms: Vec<&Tensor<S>> = terms.rec1.iter().chain(terms.rec2.iter()).collect();
    if !rec_terms.is_empty() {
        let mut rec_sum = rec_terms[0].clone();
        for t in &rec_terms[1..] {
            rec_sum = tape.add(&rec_sum, t)?;
        }
        let weighted = tape.scale(&rec_sum, S::from_f64(alpha1))?;
        total = tape.add(&total, &weighted)?;
    }
    if let Some(uni) = &terms.uni {
        let weighted = tape.scale(uni, S::from_f64(alpha2))?;
        total = tape.add(&total, &weighted)?;
    }
    let breakdown = LossBreakdown {
        l_sup: terms.sup.data()[0].as_f64(),
        l_rec1: terms.rec1.as_ref().map_or(0.0, |t| t.data()[0].as_f64()),
        l_rec2: terms.rec2.as_ref().map_or(0.0, |t| t.data()[0].as_f64()),
        l_uni: terms.uni.as_ref().map_or(0.0, |t| t.data()[0].as_f64()),
        total: total.data()[0].as_f64(),
        alpha1,
        alpha2,
    };
    Ok((total, breakdown))
}
