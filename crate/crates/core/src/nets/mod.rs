//! Network parameterizations of the local dynamics `f(t, y)`, the
//! integrand `F(y)` and the matrix-valued kernel `K(t, s)`.

mod mlp;

pub use mlp::{Activation, Mlp, MlpSpec};

use crate::ad::{Graph, Tensor};
use crate::error::{Error, Result};

/// `f(t, y)`: input `[y | t]` of width `n + 1`, output width `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsNet {
    pub mlp: Mlp,
}

impl DynamicsNet {
    pub fn new(mlp: Mlp) -> Result<Self> {
        let s = mlp.spec();
        if s.input_dim != s.output_dim + 1 {
            return Err(Error::invalid(format!(
                "dynamics net needs input n+1 and output n, got {} -> {}",
                s.input_dim, s.output_dim
            )));
        }
        Ok(DynamicsNet { mlp })
    }

    pub fn spec_for(n: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(n + 1, hidden, n)
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.spec().output_dim
    }

    /// `y` is `[batch, n]`, `t` is `[batch, 1]`.
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        t: &G::Value,
        y: &G::Value,
    ) -> Result<G::Value> {
        let input = g.concat(&[y, t], 1)?;
        self.mlp.forward(g, bound, &input)
    }
}

/// `F: R^n -> R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandNet {
    pub mlp: Mlp,
}

impl IntegrandNet {
    pub fn new(mlp: Mlp) -> Result<Self> {
        Ok(IntegrandNet { mlp })
    }

    pub fn spec_for(n: usize, m: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(n, hidden, m)
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.spec().input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.spec().output_dim
    }

    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        y: &G::Value,
    ) -> Result<G::Value> {
        self.mlp.forward(g, bound, y)
    }
}

/// `K: R^2 -> R^{n x m}`, fed the raw `(t, s)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelNet {
    pub mlp: Mlp,
    n: usize,
    m: usize,
}

impl KernelNet {
    pub fn new(mlp: Mlp, n: usize, m: usize) -> Result<Self> {
        let s = mlp.spec();
        if s.input_dim != 2 || s.output_dim != n * m {
            return Err(Error::invalid(format!(
                "kernel net needs 2 -> {n}*{m}, got {} -> {}",
                s.input_dim, s.output_dim
            )));
        }
        Ok(KernelNet { mlp, n, m })
    }

    pub fn spec_for(n: usize, m: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(2, hidden, n * m)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// Rows of `pairs` are `(t, s)`; each output row is a row-major `n x m` matrix.
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        pairs: &G::Value,
    ) -> Result<G::Value> {
        self.mlp.forward(g, bound, pairs)
    }

    /// `K(t, s)` as an `[n, m]` tensor.
    pub fn matrix(&self, t: f64, s: f64) -> Result<Tensor> {
        self.mlp.eval(&Tensor::row(&[t, s]))?.reshaped(&[self.n, self.m])
    }
}
