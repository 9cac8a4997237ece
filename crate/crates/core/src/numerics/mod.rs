//! Quadrature rules and grid interpolation.

mod grid;
mod quadrature;

pub use grid::{GridFunction, Interpolation, UniformGrid};
pub use quadrature::{gauss_legendre, integrate, map_reference, QuadratureRule, ReferenceRule};
