use serde::{Deserialize, Serialize};

use crate::ad::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Interpolation used to read an iterate between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Local four-point Lagrange stencil; falls back to linear below 4 nodes.
    Cubic,
}

/// `size` equally spaced nodes on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub t0: f64,
    pub t1: f64,
    pub size: usize,
}

impl UniformGrid {
    pub fn new(t0: f64, t1: f64, size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes, got {size}")));
        }
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(Error::invalid(format!("grid needs t0 < t1, got [{t0}, {t1}]")));
        }
        Ok(UniformGrid { t0, t1, size })
    }

    pub fn step(&self) -> f64 {
        (self.t1 - self.t0) / (self.size - 1) as f64
    }

    /// Node `k`; the last node is exactly `t1`.
    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.size {
            return self.t1;
        }
        self.t0 + (self.t1 - self.t0) * k as f64 / (self.size - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.size).map(|k| self.node(k)).collect()
    }

    /// Linear interpolation stencil `(k, w_k, w_{k+1})`, clamped to the end
    /// values outside the range. At a node the weight on that node is exactly 1.
    pub fn locate(&self, t: f64) -> (usize, f64, f64) {
        let last = self.size - 1;
        if t <= self.t0 || t.is_nan() {
            return (0, 1.0, 0.0);
        }
        if t >= self.t1 {
            return (last - 1, 0.0, 1.0);
        }
        let u = (t - self.t0) / (self.t1 - self.t0) * last as f64;
        let mut k = (u.floor() as usize).min(last - 1);
        // Rounding in `u` can land one cell off; fix against the node times.
        if t < self.node(k) {
            k -= 1;
        } else if t >= self.node(k + 1) && k + 1 < last {
            k += 1;
        }
        let (a, b) = (self.node(k), self.node(k + 1));
        if t == a {
            return (k, 1.0, 0.0);
        }
        let w = (t - a) / (b - a);
        (k, 1.0 - w, w)
    }

    /// Interpolation stencil at `t` as `(node, weight)` pairs with
    /// non-zero weights; clamped outside the range.
    pub fn stencil(&self, t: f64, kind: Interpolation) -> Vec<(usize, f64)> {
        let (k, wl, wr) = self.locate(t);
        if wr == 0.0 {
            return vec![(k, 1.0)];
        }
        if wl == 0.0 {
            return vec![(k + 1, 1.0)];
        }
        if kind == Interpolation::Linear || self.size < 4 {
            return vec![(k, wl), (k + 1, wr)];
        }
        let first = k.saturating_sub(1).min(self.size - 4);
        let xs: Vec<f64> = (first..first + 4).map(|j| self.node(j)).collect();
        (0..4)
            .map(|i| {
                let mut w = 1.0;
                for j in 0..4 {
                    if j != i {
                        w *= (t - xs[j]) / (xs[i] - xs[j]);
                    }
                }
                (first + i, w)
            })
            .collect()
    }

    /// Rows map grid values to interpolated values at `times`.
    pub fn interpolation_matrix(&self, times: &[f64]) -> SparseMatrix {
        self.interpolation_matrix_with(times, Interpolation::Linear)
    }

    pub fn interpolation_matrix_with(&self, times: &[f64], kind: Interpolation) -> SparseMatrix {
        let rows: Vec<Vec<(usize, f64)>> = times.iter().map(|&t| self.stencil(t, kind)).collect();
        SparseMatrix::from_rows(self.size, &rows).expect("indices are in range")
    }
}

/// Values on a uniform grid, `[size, dim]`, evaluated by piecewise-linear
/// interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: UniformGrid,
    values: Tensor,
}

impl GridFunction {
    pub fn new(grid: UniformGrid, values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.rows() != grid.size {
            return Err(Error::invalid(format!(
                "grid function needs [{}, dim] values, got {:?}",
                grid.size,
                values.shape()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let (k, wl, wr) = self.grid.locate(t);
        let a = self.values.row_slice(k);
        if wr == 0.0 {
            out.copy_from_slice(a);
            return;
        }
        let b = self.values.row_slice(k + 1);
        if wl == 0.0 {
            out.copy_from_slice(b);
            return;
        }
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = wl * x + wr * y;
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// Sup norm over grid nodes and components.
    pub fn sup_norm(&self) -> f64 {
        self.values.max_abs()
    }
}
