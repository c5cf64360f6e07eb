//! Robust classification with e-exponentiated convex losses.
//!
//! The crate is organised bottom-up:
//!
//! - [`transform`]: the piecewise power squashing map applied to raw scores.
//! - [`losses`]: logistic, hinge and softmax cross-entropy, plain or transformed.
//! - [`model`]: linear classifiers and small ReLU networks with manual backprop.
//! - [`optim`]: SGD/Adam, the e warm-up schedule and the training loop.
//! - [`data`]: synthetic generators, IDX/CSV loaders, label noise, normalisation.
//! - [`bounds`]: Lipschitz-in-the-small estimators and uniform-convergence
//!   confidence calculators.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rng;
pub mod transform;

pub use error::{Error, Result};
pub use losses::{BaseLoss, LossEval, LossSpec};
pub use transform::TransformParams;

/// Library version recorded in result documents.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
