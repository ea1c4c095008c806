//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records primitive operations as they are evaluated. Learnable
//! tensors live in a [`ParamStore`]; binding one onto a tape yields a
//! [`Tensor`] handle that participates in the recorded computation. After
//! [`Tape::backward`] the gradients are copied into the store and
//! [`ParamStore::adam_step`] applies the update.
//!
//! ```
//! use mn_autodiff::{Matrix, ParamStore, Tape};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Matrix::filled(2, 2, 1.0), true);
//! let mut tape = Tape::new();
//! let wt = store.bind(&mut tape, w);
//! let loss = tape.mean_all(wt).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().as_slice(), &[0.25; 4]);
//! ```

mod error;
mod gradcheck;
mod matrix;
mod param;
mod segments;
mod tape;

pub use error::AdError;
pub use gradcheck::{check_primitive, grad_check, relative_error, GradCheckReport, DEFAULT_STEP};
pub use matrix::Matrix;
pub use param::{Adam, Param, ParamId, ParamStore};
pub use segments::Segments;
pub use tape::{softplus, Gradients, OpKind, Reduce, Tape, Tensor, BATCH_NORM_EPS};
