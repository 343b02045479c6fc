//! Dense 2-D tensors with reverse-mode gradient buffers.
//!
//! A [`Tensor`] is a cheaply clonable handle to row-major storage plus a
//! same-shape gradient buffer. Handles cloned from one another share storage,
//! which is how a recorded operation on a [`crate::tape::Tape`] keeps its
//! inputs alive for the backward pass. A tensor/tape pair is confined to one
//! thread for the duration of a forward/backward episode; distinct episodes
//! (for example different cross-validation folds) own disjoint tensors.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::scalar::Scalar;

/// Row/column extent of a tensor, used in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{op}: dimension mismatch between {lhs} and {rhs}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: expected a 1x1 scalar, got {shape}")]
    NotScalar { op: &'static str, shape: Shape },
    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },
    #[error("{op}: empty pool (zero rows)")]
    EmptyPool { op: &'static str },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

impl KernelError {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        KernelError::Contract {
            op,
            msg: msg.into(),
        }
    }
}

struct Storage<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    grad: Vec<S>,
    requires_grad: bool,
}

/// Handle to shared tensor storage. `Clone` aliases the same buffer.
pub struct Tensor<S: Scalar> {
    inner: Rc<RefCell<Storage<S>>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("rows", &st.rows)
            .field("cols", &st.cols)
            .field("requires_grad", &st.requires_grad)
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    fn from_storage(
        op: &'static str,
        rows: usize,
        cols: usize,
        data: Vec<S>,
        requires_grad: bool,
    ) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::contract(
                op,
                format!(
                    "data length {} does not match shape {}x{}",
                    data.len(),
                    rows,
                    cols
                ),
            ));
        }
        let grad = vec![S::zero(); data.len()];
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Storage {
                rows,
                cols,
                data,
                grad,
                requires_grad,
            })),
        })
    }

    /// Constant tensor (not tracked as a trainable leaf).
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, KernelError> {
        Self::from_storage("tensor", rows, cols, data, false)
    }

    /// Trainable leaf: the optimizer reads its gradient after backward.
    pub fn param(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, KernelError> {
        Self::from_storage("tensor", rows, cols, data, true)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_storage("tensor", rows, cols, vec![S::zero(); rows * cols], false)
            .expect("consistent shape")
    }

    pub fn scalar(value: S) -> Self {
        Self::from_storage("tensor", 1, 1, vec![value], false).expect("consistent shape")
    }

    /// Build from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, KernelError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(KernelError::contract(
                    "tensor",
                    format!("ragged rows: expected {} columns, got {}", c, row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::from_storage("tensor", r, c, data, false)
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().cols
    }

    pub fn shape(&self) -> Shape {
        let st = self.inner.borrow();
        Shape {
            rows: st.rows,
            cols: st.cols,
        }
    }

    pub fn len(&self) -> usize {
        let st = self.inner.borrow();
        st.rows * st.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Snapshot of the value buffer.
    pub fn data(&self) -> Vec<S> {
        self.inner.borrow().data.clone()
    }

    /// Snapshot of the gradient buffer.
    pub fn grad(&self) -> Vec<S> {
        self.inner.borrow().grad.clone()
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        let st = self.inner.borrow();
        assert!(row < st.rows && col < st.cols, "index out of range");
        st.data[row * st.cols + col]
    }

    pub fn grad_at(&self, row: usize, col: usize) -> S {
        let st = self.inner.borrow();
        assert!(row < st.rows && col < st.cols, "index out of range");
        st.grad[row * st.cols + col]
    }

    pub fn set(&self, row: usize, col: usize, value: S) {
        let mut st = self.inner.borrow_mut();
        assert!(row < st.rows && col < st.cols, "index out of range");
        let c = st.cols;
        st.data[row * c + col] = value;
    }

    /// Add `delta` to one flat entry; used by the finite-difference checker.
    pub fn nudge(&self, flat_index: usize, delta: S) {
        let mut st = self.inner.borrow_mut();
        st.data[flat_index] = st.data[flat_index] + delta;
    }

    /// Reset every gradient entry to exactly zero.
    pub fn zero_grad(&self) {
        let mut st = self.inner.borrow_mut();
        for g in st.grad.iter_mut() {
            *g = S::zero();
        }
    }

    /// Run `f` over the value buffer without cloning.
    pub fn with_data<R>(&self, f: impl FnOnce(&[S]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Apply an in-place update with read access to the gradient, as an
    /// optimizer step does.
    pub fn update(&self, f: impl FnOnce(&mut [S], &[S])) {
        let st = &mut *self.inner.borrow_mut();
        f(&mut st.data, &st.grad);
    }

    /// Overwrite the value buffer; shape must be unchanged.
    pub fn load_data(&self, data: Vec<S>) -> Result<(), KernelError> {
        let mut st = self.inner.borrow_mut();
        if data.len() != st.rows * st.cols {
            return Err(KernelError::contract(
                "tensor",
                format!(
                    "load of {} values into shape {}x{}",
                    data.len(),
                    st.rows,
                    st.cols
                ),
            ));
        }
        st.data = data;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&self, grad: &[S]) {
        let mut st = self.inner.borrow_mut();
        debug_assert_eq!(grad.len(), st.grad.len(), "gradient shape mismatch");
        for (g, d) in st.grad.iter_mut().zip(grad) {
            *g = *g + *d;
        }
    }

    /// True when two handles alias the same storage.
    pub fn same_storage(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}
