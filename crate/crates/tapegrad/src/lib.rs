//! `tapegrad` is a minimal deterministic reverse-mode autodiff kernel on
//! dense row-major f64 tensors: a value arena plus an operation tape,
//! replayed in exact reverse order to accumulate gradients.
//!
//! Everything runs single-threaded in f64. Identical inputs produce
//! bit-identical forward values and gradients across runs on one machine.
//! Shape mismatches, fully-masked softmax rows, and non-finite values are
//! hard errors (panics) with both offending shapes in the message, in the
//! style of `ndarray`.
//!
//! ```
//! use tapegrad::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.param(&[3], vec![1.0, 2.0, 3.0]);
//! let loss = x.mul(&x).sum_all();
//! tape.backward(&loss);
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
//! ```

mod attention;
mod gradcheck;
mod kernels;
mod mask;
mod optim;
mod tape;
mod tensor;

pub use attention::multi_head_attention;
pub use gradcheck::{central_diff_gradient, max_relative_error, DEFAULT_STEP};
pub use mask::AttnMask;
pub use optim::{AdamW, AdamWConfig, LrGroup, OptimizerState};
pub use tape::Tape;
pub use tensor::{concat_cols, concat_rows, embedding, Tensor, LAYER_NORM_EPS};

/// Arguments of `log` are clamped here to keep KL-style losses finite.
pub const LOG_CLAMP: f64 = 1e-12;
