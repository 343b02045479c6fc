//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Each op method computes its forward result immediately and records the
//! operation; [`Tape::backward`] replays the record in reverse, accumulating
//! vector-Jacobian products into every input's gradient buffer. The tape is
//! define-by-run: a fresh tape is built per forward/backward episode, so
//! graphs of varying size cost nothing to reconfigure.

use crate::scalar::Scalar;
use crate::tensor::{KernelError, Tensor};

enum Op<S: Scalar> {
    Matmul {
        a: Tensor<S>,
        b: Tensor<S>,
        out: Tensor<S>,
    },
    Add {
        a: Tensor<S>,
        b: Tensor<S>,
        out: Tensor<S>,
    },
    Sub {
        a: Tensor<S>,
        b: Tensor<S>,
        out: Tensor<S>,
    },
    Mul {
        a: Tensor<S>,
        b: Tensor<S>,
        out: Tensor<S>,
    },
    Relu {
        x: Tensor<S>,
        out: Tensor<S>,
    },
    Tanh {
        x: Tensor<S>,
        out: Tensor<S>,
    },
    Scale {
        x: Tensor<S>,
        c: S,
        out: Tensor<S>,
    },
    AddBiasRow {
        x: Tensor<S>,
        bias: Tensor<S>,
        out: Tensor<S>,
    },
    RowSoftmax {
        x: Tensor<S>,
        out: Tensor<S>,
    },
    MeanRows {
        x: Tensor<S>,
        out: Tensor<S>,
    },
    SumAll {
        x: Tensor<S>,
        out: Tensor<S>,
    },
    GatherRows {
        x: Tensor<S>,
        indices: Vec<usize>,
        out: Tensor<S>,
    },
    ReplaceRows {
        x: Tensor<S>,
        row: Tensor<S>,
        indices: Vec<usize>,
        out: Tensor<S>,
    },
    ConcatRows {
        xs: Vec<Tensor<S>>,
        out: Tensor<S>,
    },
    ConcatCols {
        xs: Vec<Tensor<S>>,
        out: Tensor<S>,
    },
    CrossEntropyLogits {
        logits: Tensor<S>,
        labels: Vec<usize>,
        out: Tensor<S>,
    },
    RowL2Normalize {
        x: Tensor<S>,
        out: Tensor<S>,
    },
    Uniformity {
        m: Tensor<S>,
        t: S,
        out: Tensor<S>,
    },
}

/// Ordered record of executed differentiable operations.
#[derive(Default)]
pub struct Tape<S: Scalar> {
    ops: Vec<Op<S>>,
}

// a: m×k, b: k×n -> m×n
fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

// a: m×n, b: k×n -> a·bᵀ, m×k
fn matmul_nt_raw<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

// a: m×k, g: m×n -> aᵀ·g, k×n
fn matmul_tn_raw<S: Scalar>(a: &[S], g: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o = *o + av * gv;
            }
        }
    }
    out
}

fn check_same_shape<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<(), KernelError> {
    if a.shape() != b.shape() {
        return Err(KernelError::DimensionMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn check_indices<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    indices: &[usize],
) -> Result<(), KernelError> {
    let rows = x.rows();
    for &i in indices {
        if i >= rows {
            return Err(KernelError::RowOutOfRange {
                op,
                index: i,
                rows,
            });
        }
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(KernelError::contract(op, "duplicate row index"));
    }
    Ok(())
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { ops: Vec::new() }
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// Standard matrix product. Backward: ∂a = g·bᵀ, ∂b = aᵀ·g.
    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        if a.cols() != b.rows() {
            return Err(KernelError::DimensionMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let data = a.with_data(|ad| b.with_data(|bd| matmul_raw(ad, bd, m, k, n)));
        let out = Tensor::new(m, n, data)?;
        self.ops.push(Op::Matmul {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        check_same_shape("add", a, b)?;
        let data = a.with_data(|ad| {
            b.with_data(|bd| ad.iter().zip(bd).map(|(&x, &y)| x + y).collect::<Vec<_>>())
        });
        let out = Tensor::new(a.rows(), a.cols(), data)?;
        self.ops.push(Op::Add {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn sub(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        check_same_shape("sub", a, b)?;
        let data = a.with_data(|ad| {
            b.with_data(|bd| ad.iter().zip(bd).map(|(&x, &y)| x - y).collect::<Vec<_>>())
        });
        let out = Tensor::new(a.rows(), a.cols(), data)?;
        self.ops.push(Op::Sub {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        check_same_shape("mul", a, b)?;
        let data = a.with_data(|ad| {
            b.with_data(|bd| ad.iter().zip(bd).map(|(&x, &y)| x * y).collect::<Vec<_>>())
        });
        let out = Tensor::new(a.rows(), a.cols(), data)?;
        self.ops.push(Op::Mul {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Backward passes gradient only where the input is strictly positive.
    pub fn relu(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        let data = x.with_data(|xd| {
            xd.iter()
                .map(|&v| if v > S::zero() { v } else { S::zero() })
                .collect::<Vec<_>>()
        });
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.ops.push(Op::Relu {
            x: x.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn tanh(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        let data = x.with_data(|xd| xd.iter().map(|&v| v.tanh()).collect::<Vec<_>>());
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.ops.push(Op::Tanh {
            x: x.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Multiply every entry by the constant `c`.
    pub fn scale(&mut self, x: &Tensor<S>, c: S) -> Result<Tensor<S>, KernelError> {
        let data = x.with_data(|xd| xd.iter().map(|&v| v * c).collect::<Vec<_>>());
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.ops.push(Op::Scale {
            x: x.clone(),
            c,
            out: out.clone(),
        });
        Ok(out)
    }

    /// Add a 1×c bias row to every row of x. The only broadcast the kernel
    /// supports.
    pub fn add_bias_row(
        &mut self,
        x: &Tensor<S>,
        bias: &Tensor<S>,
    ) -> Result<Tensor<S>, KernelError> {
        if bias.rows() != 1 || bias.cols() != x.cols() {
            return Err(KernelError::DimensionMismatch {
                op: "add_bias_row",
                lhs: x.shape(),
                rhs: bias.shape(),
            });
        }
        let cols = x.cols();
        let data = x.with_data(|xd| {
            bias.with_data(|bd| {
                xd.iter()
                    .enumerate()
                    .map(|(i, &v)| v + bd[i % cols])
                    .collect::<Vec<_>>()
            })
        });
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.ops.push(Op::AddBiasRow {
            x: x.clone(),
            bias: bias.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn row_softmax(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        let (r, c) = (x.rows(), x.cols());
        if c == 0 {
            return Err(KernelError::contract("row_softmax", "zero columns"));
        }
        let mut data = vec![S::zero(); r * c];
        let finite = x.with_data(|xd| {
            if xd.iter().any(|v| !v.is_finite()) {
                return false;
            }
            for i in 0..r {
                let row = &xd[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    data[i * c + j] = e;
                    sum = sum + e;
                }
                for j in 0..c {
                    data[i * c + j] = data[i * c + j] / sum;
                }
            }
            true
        });
        if !finite {
            return Err(KernelError::NonFinite { op: "row_softmax" });
        }
        let out = Tensor::new(r, c, data)?;
        self.ops.push(Op::RowSoftmax {
            x: x.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Column means: r×c → 1×c. Backward distributes g/r to every row.
    pub fn mean_rows(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        let (r, c) = (x.rows(), x.cols());
        if r == 0 {
            return Err(KernelError::EmptyPool { op: "mean_rows" });
        }
        let inv = S::one() / S::from_f64(r as f64);
        let data = x.with_data(|xd| {
            let mut acc = vec![S::zero(); c];
            for i in 0..r {
                for j in 0..c {
                    acc[j] = acc[j] + xd[i * c + j];
                }
            }
            for a in acc.iter_mut() {
                *a = *a * inv;
            }
            acc
        });
        let out = Tensor::new(1, c, data)?;
        self.ops.push(Op::MeanRows {
            x: x.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum_all(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        let total = x.with_data(|xd| xd.iter().fold(S::zero(), |acc, &v| acc + v));
        let out = Tensor::scalar(total);
        self.ops.push(Op::SumAll {
            x: x.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Select rows by index (distinct indices). Backward scatter-adds.
    pub fn gather_rows(
        &mut self,
        x: &Tensor<S>,
        indices: &[usize],
    ) -> Result<Tensor<S>, KernelError> {
        check_indices("gather_rows", x, indices)?;
        let c = x.cols();
        let data = x.with_data(|xd| {
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                out.extend_from_slice(&xd[i * c..(i + 1) * c]);
            }
            out
        });
        let out = Tensor::new(indices.len(), c, data)?;
        self.ops.push(Op::GatherRows {
            x: x.clone(),
            indices: indices.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Copy of x with the listed rows overwritten by the 1×c `row` tensor.
    /// Gradient flows to `row` from every overwritten position and to x from
    /// the untouched rows only.
    pub fn replace_rows(
        &mut self,
        x: &Tensor<S>,
        indices: &[usize],
        row: &Tensor<S>,
    ) -> Result<Tensor<S>, KernelError> {
        check_indices("replace_rows", x, indices)?;
        if row.rows() != 1 || row.cols() != x.cols() {
            return Err(KernelError::DimensionMismatch {
                op: "replace_rows",
                lhs: x.shape(),
                rhs: row.shape(),
            });
        }
        let c = x.cols();
        let mut data = x.data();
        row.with_data(|rd| {
            for &i in indices {
                data[i * c..(i + 1) * c].copy_from_slice(rd);
            }
        });
        let out = Tensor::new(x.rows(), c, data)?;
        self.ops.push(Op::ReplaceRows {
            x: x.clone(),
            row: row.clone(),
            indices: indices.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Stack tensors vertically; all must share a column count.
    pub fn concat_rows(&mut self, xs: &[Tensor<S>]) -> Result<Tensor<S>, KernelError> {
        let first = xs
            .first()
            .ok_or_else(|| KernelError::contract("concat_rows", "empty input list"))?;
        let c = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for x in xs {
            if x.cols() != c {
                return Err(KernelError::DimensionMismatch {
                    op: "concat_rows",
                    lhs: first.shape(),
                    rhs: x.shape(),
                });
            }
            rows += x.rows();
            x.with_data(|xd| data.extend_from_slice(xd));
        }
        let out = Tensor::new(rows, c, data)?;
        self.ops.push(Op::ConcatRows {
            xs: xs.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Concatenate tensors side by side; all must share a row count.
    pub fn concat_cols(&mut self, xs: &[Tensor<S>]) -> Result<Tensor<S>, KernelError> {
        let first = xs
            .first()
            .ok_or_else(|| KernelError::contract("concat_cols", "empty input list"))?;
        let r = first.rows();
        let mut cols = 0;
        for x in xs {
            if x.rows() != r {
                return Err(KernelError::DimensionMismatch {
                    op: "concat_cols",
                    lhs: first.shape(),
                    rhs: x.shape(),
                });
            }
            cols += x.cols();
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for x in xs {
                let c = x.cols();
                x.with_data(|xd| data.extend_from_slice(&xd[i * c..(i + 1) * c]));
            }
        }
        let out = Tensor::new(r, cols, data)?;
        self.ops.push(Op::ConcatCols {
            xs: xs.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Mean negative log-likelihood of one-hot labels under row softmax of
    /// the logits, fused through log-sum-exp so confident predictions never
    /// hit log(0).
    pub fn cross_entropy_logits(
        &mut self,
        logits: &Tensor<S>,
        labels: &[usize],
    ) -> Result<Tensor<S>, KernelError> {
        let (r, c) = (logits.rows(), logits.cols());
        if labels.len() != r {
            return Err(KernelError::contract(
                "cross_entropy_logits",
                format!("{} labels for {} logit rows", labels.len(), r),
            ));
        }
        if r == 0 {
            return Err(KernelError::EmptyPool {
                op: "cross_entropy_logits",
            });
        }
        for &l in labels {
            if l >= c {
                return Err(KernelError::LabelOutOfRange {
                    op: "cross_entropy_logits",
                    label: l,
                    classes: c,
                });
            }
        }
        let total = logits.with_data(|ld| {
            let mut acc = S::zero();
            for (i, &label) in labels.iter().enumerate() {
                let row = &ld[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
                let lse = row
                    .iter()
                    .fold(S::zero(), |s, &v| s + (v - max).exp())
                    .ln()
                    + max;
                acc = acc + (lse - row[label]);
            }
            acc / S::from_f64(r as f64)
        });
        let out = Tensor::scalar(total);
        self.ops.push(Op::CrossEntropyLogits {
            logits: logits.clone(),
            labels: labels.to_vec(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Scale every row to unit Euclidean length (rows shorter than 1e-12 are
    /// left on their tiny sphere rather than dividing by zero).
    pub fn row_l2_normalize(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        let (r, c) = (x.rows(), x.cols());
        let floor = S::from_f64(1e-12);
        let data = x.with_data(|xd| {
            let mut out = vec![S::zero(); r * c];
            for i in 0..r {
                let row = &xd[i * c..(i + 1) * c];
                let norm = row
                    .iter()
                    .fold(S::zero(), |acc, &v| acc + v * v)
                    .sqrt()
                    .max(floor);
                for (j, &v) in row.iter().enumerate() {
                    out[i * c + j] = v / norm;
                }
            }
            out
        });
        let out = Tensor::new(r, c, data)?;
        self.ops.push(Op::RowL2Normalize {
            x: x.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Log of the average pairwise Gaussian potential over the rows of `m`,
    /// taken over unordered distinct pairs. Always ≤ 0; equals 0 only when
    /// all rows coincide.
    pub fn uniformity(&mut self, m: &Tensor<S>, t: S) -> Result<Tensor<S>, KernelError> {
        let (n, d) = (m.rows(), m.cols());
        if n < 2 {
            return Err(KernelError::contract(
                "uniformity",
                format!("need at least 2 rows to form a pair, got {n}"),
            ));
        }
        if !(t.is_finite() && t > S::zero()) {
            return Err(KernelError::contract("uniformity", "t must be finite and > 0"));
        }
        let value = m.with_data(|md| {
            let mut sum = S::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut sq = S::zero();
                    for k in 0..d {
                        let diff = md[i * d + k] - md[j * d + k];
                        sq = sq + diff * diff;
                    }
                    sum = sum + (-t * sq).exp();
                }
            }
            let pairs = S::from_f64((n * (n - 1) / 2) as f64);
            (sum / pairs).ln()
        });
        let out = Tensor::scalar(value);
        self.ops.push(Op::Uniformity {
            m: m.clone(),
            t,
            out: out.clone(),
        });
        Ok(out)
    }

    /// Replay the record in reverse, accumulating gradients. The loss must be
    /// a 1×1 tensor; its gradient is seeded with 1.0.
    pub fn backward(&mut self, loss: &Tensor<S>) -> Result<(), KernelError> {
        if loss.rows() != 1 || loss.cols() != 1 {
            return Err(KernelError::NotScalar {
                op: "backward",
                shape: loss.shape(),
            });
        }
        loss.accumulate_grad(&[S::one()]);
        for op in self.ops.iter().rev() {
            backward_op(op);
        }
        Ok(())
    }
}

fn backward_op<S: Scalar>(op: &Op<S>) {
    match op {
        Op::Matmul { a, b, out } => {
            let g = out.grad();
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let da = b.with_data(|bd| matmul_nt_raw(&g, bd, m, n, k));
            a.accumulate_grad(&da);
            let db = a.with_data(|ad| matmul_tn_raw(ad, &g, m, k, n));
            b.accumulate_grad(&db);
        }
        Op::Add { a, b, out } => {
            let g = out.grad();
            a.accumulate_grad(&g);
            b.accumulate_grad(&g);
        }
        Op::Sub { a, b, out } => {
            let g = out.grad();
            a.accumulate_grad(&g);
            let neg: Vec<S> = g.iter().map(|&v| -v).collect();
            b.accumulate_grad(&neg);
        }
        Op::Mul { a, b, out } => {
            let g = out.grad();
            let da = b.with_data(|bd| {
                g.iter().zip(bd).map(|(&gv, &bv)| gv * bv).collect::<Vec<_>>()
            });
            let db = a.with_data(|ad| {
                g.iter().zip(ad).map(|(&gv, &av)| gv * av).collect::<Vec<_>>()
            });
            a.accumulate_grad(&da);
            b.accumulate_grad(&db);
        }
        Op::Relu { x, out } => {
            let g = out.grad();
            let dx = x.with_data(|xd| {
                g.iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect::<Vec<_>>()
            });
            x.accumulate_grad(&dx);
        }
        Op::Tanh { x, out } => {
            let g = out.grad();
            let dx = out.with_data(|yd| {
                g.iter()
                    .zip(yd)
                    .map(|(&gv, &yv)| gv * (S::one() - yv * yv))
                    .collect::<Vec<_>>()
            });
            x.accumulate_grad(&dx);
        }
        Op::Scale { x, c, out } => {
            let g = out.grad();
            let dx: Vec<S> = g.iter().map(|&gv| gv * *c).collect();
            x.accumulate_grad(&dx);
        }
        Op::AddBiasRow { x, bias, out } => {
            let g = out.grad();
            x.accumulate_grad(&g);
            let c = x.cols();
            let mut db = vec![S::zero(); c];
            for (i, &gv) in g.iter().enumerate() {
                db[i % c] = db[i % c] + gv;
            }
            bias.accumulate_grad(&db);
        }
        Op::RowSoftmax { x, out } => {
            let g = out.grad();
            let (r, c) = (x.rows(), x.cols());
            let dx = out.with_data(|yd| {
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    let row_y = &yd[i * c..(i + 1) * c];
                    let row_g = &g[i * c..(i + 1) * c];
                    let dot = row_y
                        .iter()
                        .zip(row_g)
                        .fold(S::zero(), |acc, (&y, &gv)| acc + y * gv);
                    for j in 0..c {
                        dx[i * c + j] = row_y[j] * (row_g[j] - dot);
                    }
                }
                dx
            });
            x.accumulate_grad(&dx);
        }
        Op::MeanRows { x, out } => {
            let g = out.grad();
            let (r, c) = (x.rows(), x.cols());
            let inv = S::one() / S::from_f64(r as f64);
            let mut dx = vec![S::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = g[j] * inv;
                }
            }
            x.accumulate_grad(&dx);
        }
        Op::SumAll { x, out } => {
            let g0 = out.grad()[0];
            let dx = vec![g0; x.len()];
            x.accumulate_grad(&dx);
        }
        Op::GatherRows { x, indices, out } => {
            let g = out.grad();
            let c = x.cols();
            let mut dx = vec![S::zero(); x.len()];
            for (k, &i) in indices.iter().enumerate() {
                for j in 0..c {
                    dx[i * c + j] = dx[i * c + j] + g[k * c + j];
                }
            }
            x.accumulate_grad(&dx);
        }
        Op::ReplaceRows {
            x,
            row,
            indices,
            out,
        } => {
            let g = out.grad();
            let c = x.cols();
            let mut dx = g.clone();
            let mut drow = vec![S::zero(); c];
            for &i in indices {
                for j in 0..c {
                    drow[j] = drow[j] + g[i * c + j];
                    dx[i * c + j] = S::zero();
                }
            }
            x.accumulate_grad(&dx);
            row.accumulate_grad(&drow);
        }
        Op::ConcatRows { xs, out } => {
            let g = out.grad();
            let c = out.cols();
            let mut offset = 0;
            for x in xs {
                let n = x.rows() * c;
                x.accumulate_grad(&g[offset..offset + n]);
                offset += n;
            }
        }
        Op::ConcatCols { xs, out } => {
            let g = out.grad();
            let total_c = out.cols();
            let r = out.rows();
            let mut col_offset = 0;
            for x in xs {
                let c = x.cols();
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[i * total_c + col_offset + j];
                    }
                }
                x.accumulate_grad(&dx);
                col_offset += c;
            }
        }
        Op::CrossEntropyLogits { logits, labels, out } => {
            let g0 = out.grad()[0];
            let (r, c) = (logits.rows(), logits.cols());
            let inv_n = S::one() / S::from_f64(r as f64);
            let dx = logits.with_data(|ld| {
                let mut dx = vec![S::zero(); r * c];
                for (i, &label) in labels.iter().enumerate() {
                    let row = &ld[i * c..(i + 1) * c];
                    let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let mut sum = S::zero();
                    for (j, &v) in row.iter().enumerate() {
                        let e = (v - max).exp();
                        dx[i * c + j] = e;
                        sum = sum + e;
                    }
                    for j in 0..c {
                        let p = dx[i * c + j] / sum;
                        let y = if j == label { S::one() } else { S::zero() };
                        dx[i * c + j] = g0 * (p - y) * inv_n;
                    }
                }
                dx
            });
            logits.accumulate_grad(&dx);
        }
        Op::RowL2Normalize { x, out } => {
            let g = out.grad();
            let (r, c) = (x.rows(), x.cols());
            let floor = S::from_f64(1e-12);
            let dx = x.with_data(|xd| {
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    let row = &xd[i * c..(i + 1) * c];
                    let norm = row
                        .iter()
                        .fold(S::zero(), |acc, &v| acc + v * v)
                        .sqrt()
                        .max(floor);
                    // y = x/n ⇒ dx = (g − y (g·y)) / n
                    let g_row = &g[i * c..(i + 1) * c];
                    let mut dot = S::zero();
                    for j in 0..c {
                        dot = dot + g_row[j] * row[j] / norm;
                    }
                    for j in 0..c {
                        dx[i * c + j] = (g_row[j] - row[j] / norm * dot) / norm;
                    }
                }
                dx
            });
            x.accumulate_grad(&dx);
        }
        Op::Uniformity { m, t, out } => {
            let g0 = out.grad()[0];
            let (n, d) = (m.rows(), m.cols());
            let dx = m.with_data(|md| {
                // Recompute the pair weights w_ij = exp(-t d_ij^2); the loss
                // is log(sum w / pairs), so dL/dm_i = (-2t/sum) Σ_j w_ij (m_i - m_j).
                let mut weights = vec![S::zero(); n * n];
                let mut sum = S::zero();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let mut sq = S::zero();
                        for k in 0..d {
                            let diff = md[i * d + k] - md[j * d + k];
                            sq = sq + diff * diff;
                        }
                        let w = (-*t * sq).exp();
                        weights[i * n + j] = w;
                        weights[j * n + i] = w;
                        sum = sum + w;
                    }
                }
                let coeff = -(S::from_f64(2.0) * *t) / sum;
                let mut dx = vec![S::zero(); n * d];
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = weights[i * n + j];
                        for k in 0..d {
                            let diff = md[i * d + k] - md[j * d + k];
                            dx[i * d + k] = dx[i * d + k] + g0 * coeff * w * diff;
                        }
                    }
                }
                dx
            });
            m.accumulate_grad(&dx);
        }
    }
}
