//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records each primitive as it is evaluated. Calling
//! [`Tape::backward`] on a scalar result sweeps the record in reverse and
//! returns [`Gradients`] for every trainable leaf. [`check_gradients`]
//! compares those gradients against central finite differences.
//!
//! ```
//! use tide::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod check;
mod tape;
mod tensor;

pub use check::{check_gradients, check_gradients_multi, GradCheck};
pub use tape::{log_sum_exp_rows, softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: result is not finite")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("backward needs a 1 x 1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("gradient check hit a non-finite value at leaf {leaf}, entry ({row}, {col})")]
    GradCheckNonFinite { leaf: usize, row: usize, col: usize },
}
