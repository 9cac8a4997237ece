//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The primitive set is closed: everything the solver and the networks need
//! is expressed through [`Primitive`]. Code that must run both with and
//! without gradient recording is written against [`Graph`].

mod graph;
mod ops;
mod params;
mod tape;
mod tensor;

pub use graph::{Eager, Graph};
pub use ops::{PairContraction, Primitive, RowFunction, SparseMatrix};
pub use params::{ParamVector, Segment};
pub use tape::{grad_check, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
