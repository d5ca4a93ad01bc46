//! Influence-based probabilistic subsampling for bag-supervised (distantly
//! supervised) multi-class classification.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation over
//! in-memory data: a softmax head with closed-form derivatives, inverse
//! Hessian-vector products (exact and stochastic), per-instance influence
//! scores, sigmoid / batch-in-bag sampling, the training loop and held-out
//! evaluation. File formats, the experiment runner and the CLI live in the
//! `reif` crate.
//!
//! Transcendental functions go through `libm` on every target so results are
//! bit-identical regardless of the platform math library.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod influence;
pub mod model;
pub mod numeric;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Example, LabeledPoint, SoftmaxModel};
