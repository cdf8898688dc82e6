//! Robust unsupervised domain adaptation with α-divergence.
//!
//! Feature distributions of a source and a target batch are modelled as
//! uniform Gaussian-kernel mixtures and aligned by minimizing a Monte-Carlo
//! α-divergence next to the source classification loss. For α < 1 the
//! alignment term discounts samples far from the other domain's mass, which
//! keeps private (outlier) classes from dragging the shared features.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod cli;
pub mod density;
pub mod divergence;
pub mod error;
pub mod matrix;
pub mod nnet;
pub mod rng;
pub mod synthbench;

pub use error::{Error, Result};
pub use matrix::Matrix;
