use std::sync::Arc;

use super::ops::{PairContraction, Primitive, RowFunction, SparseMatrix};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything that can evaluate primitives: a recording [`Tape`](super::Tape)
/// or the non-recording [`Eager`] evaluator.
///
/// Solver and network code is written once against this trait; training
/// runs it on a tape, inference and data generation run it eagerly.
pub trait Graph {
    type Value: Clone;

    /// Apply a primitive to operands and return its output handle.
    fn record(&mut self, primitive: Primitive, inputs: &[&Self::Value]) -> Result<Self::Value>;

    /// Insert a value that gradients never flow into.
    fn constant(&mut self, value: Tensor) -> Self::Value;

    /// Insert a differentiable input. Identical to [`Graph::constant`] on
    /// evaluators that do not record.
    fn input(&mut self, value: Tensor) -> Self::Value;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Matmul, &[a, b])
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Mul, &[a, b])
    }

    fn scale(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value> {
        self.record(Primitive::Scale(c), &[a])
    }

    fn tanh(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Tanh, &[a])
    }

    fn cosh(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Cosh, &[a])
    }

    fn sinh(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Sinh, &[a])
    }

    fn clamp(&mut self, a: &Self::Value, lo: f64, hi: f64) -> Result<Self::Value> {
        self.record(Primitive::Clamp { lo, hi }, &[a])
    }

    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::Sum, &[a])
    }

    fn weighted_sum(&mut self, weights: &[f64], xs: &[&Self::Value]) -> Result<Self::Value> {
        if weights.len() != xs.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} operands", weights.len(), xs.len()),
            ));
        }
        self.record(Primitive::WeightedSum(weights.to_vec()), xs)
    }

    fn reshape(&mut self, a: &Self::Value, shape: &[usize]) -> Result<Self::Value> {
        self.record(Primitive::Reshape(shape.to_vec()), &[a])
    }

    fn concat(&mut self, xs: &[&Self::Value], axis: usize) -> Result<Self::Value> {
        self.record(Primitive::Concat { axis }, xs)
    }

    fn slice(
        &mut self,
        a: &Self::Value,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Self::Value> {
        self.record(Primitive::Slice { axis, start, end }, &[a])
    }

    fn add_bias(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::AddBias, &[x, bias])
    }

    fn sparse_matmul(&mut self, a: &Arc<SparseMatrix>, x: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::SparseMatmul(Arc::clone(a)), &[x])
    }

    fn pair_contract(
        &mut self,
        plan: &Arc<PairContraction>,
        kernel: &Self::Value,
        integrand: &Self::Value,
    ) -> Result<Self::Value> {
        self.record(Primitive::PairContract(Arc::clone(plan)), &[kernel, integrand])
    }

    fn row_map(&mut self, f: &Arc<dyn RowFunction>, x: &Self::Value) -> Result<Self::Value> {
        self.record(Primitive::RowMap(Arc::clone(f)), &[x])
    }
}

/// Evaluates primitives immediately without recording anything.
#[derive(Debug, Default, Clone)]
pub struct Eager {
    strict: bool,
}

impl Eager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reject non-finite primitive outputs.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }
}

impl Graph for Eager {
    type Value = Tensor;

    fn record(&mut self, primitive: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        let out = primitive.forward(inputs)?;
        if self.strict && !out.is_finite() {
            return Err(Error::NonFinite(primitive.name().to_string()));
        }
        Ok(out)
    }

    fn constant(&mut self, value: Tensor) -> Tensor {
        value
    }

    fn input(&mut self, value: Tensor) -> Tensor {
        value
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_of_equal_values() {
        let mut g = Eager::new();
        let a = Tensor::row(&[2.0]);
        let out = g.weighted_sum(&[0.3, 0.7], &[&a, &a]).unwrap();
        assert!((out.item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tanh_of_zero() {
        let mut g = Eager::new();
        let out = g.tanh(&Tensor::row(&[0.0])).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn strict_mode_flags_overflow() {
        let mut g = Eager::new().strict(true);
        let err = g.cosh(&Tensor::row(&[1e4])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref p) if p == "elementwise_cosh"));
        let mut lax = Eager::new();
        assert!(lax.cosh(&Tensor::row(&[1e4])).is_ok());
    }

    #[test]
    fn concat_and_slice() {
        let mut g = Eager::new();
        let a = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = g.concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = g.slice(&c, 1, 1, 3).unwrap();
        assert_eq!(s, b);
        let r = g.concat(&[&b, &b], 0).unwrap();
        assert_eq!(r.shape(), &[4, 2]);
        assert!(g.slice(&c, 0, 1, 3).is_err());
    }

    #[test]
    fn pair_contract_matches_hand_product() {
        // Two targets, two nodes, n = 2, m = 1, batch 1.
        let plan = Arc::new(PairContraction {
            targets: 2,
            nodes: 2,
            n: 2,
            m: 1,
            pairs: vec![(0, 0, 0.5), (0, 1, 0.5), (1, 1, 2.0)],
        });
        let k = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 1.0, -1.0]).unwrap();
        let f = Tensor::matrix(2, 1, vec![10.0, 20.0]).unwrap();
        let mut g = Eager::new();
        let out = g.pair_contract(&plan, &k, &f).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert_eq!(out.data(), &[0.5 * 10.0 + 0.5 * 60.0, 0.5 * 20.0 + 0.5 * 80.0, 40.0, -40.0]);
    }
}
