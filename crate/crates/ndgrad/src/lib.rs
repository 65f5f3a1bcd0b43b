//! Dense `f64` tensors with a reverse-mode automatic differentiation tape.
//!
//! Build a computation on a [`Tape`], mark trainable inputs with
//! [`Tape::param`], then call [`Tape::backward`] on a one-element result:
//!
//! ```
//! use ndgrad::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
//! let x = tape.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
//! let wx = tape.mul(w, x).unwrap();
//! let root = tape.sum(wx).unwrap();
//! tape.backward(root).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[3.0, 4.0]);
//! ```

mod check;
mod error;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_coords, GradCheckReport};
pub use error::{GradError, Result};
pub use tape::{ElementwiseKind, ReduceKind, Tape, Var, GATHER_ZERO};
pub use tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    tape::sigmoid(x)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    tape::softplus(x)
}
