//! Neural integro-differential equations: a reverse-mode autodiff engine,
//! small MLPs, a successive-approximation IDE solver, unrolled and adjoint
//! gradients, training, analysis and synthetic datasets.

// `!(a < b)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad;
pub mod analysis;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod gradients;
pub mod nets;
pub mod numerics;
pub mod rng;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
