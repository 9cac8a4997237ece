//! Primitive operations: forward kernels and pullbacks.

use std::sync::Arc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Constant sparse matrix in CSR layout, used as the left factor of
/// [`Primitive::SparseMatmul`] (interpolation and quadrature maps).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row `(column, value)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, entries) in rows.iter().enumerate() {
            for &(c, v) in entries {
                if c >= cols {
                    return Err(Error::shape(
                        "sparse_matmul",
                        format!("row {r} references column {c} of {cols}"),
                    ));
                }
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.rows() != self.cols {
            return Err(Error::shape(
                "sparse_matmul",
                format!("[{}, {}] x {:?}", self.rows, self.cols, x.shape()),
            ));
        }
        let c = x.cols();
        let mut out = vec![0.0; self.rows * c];
        for r in 0..self.rows {
            let orow = &mut out[r * c..(r + 1) * c];
            for (j, w) in self.row(r) {
                for (o, &v) in orow.iter_mut().zip(x.row_slice(j)) {
                    *o += w * v;
                }
            }
        }
        Tensor::matrix(self.rows, c, out)
    }

    /// `selfᵀ · d`.
    pub fn apply_transposed(&self, d: &Tensor) -> Tensor {
        let c = d.cols();
        let mut out = vec![0.0; self.cols * c];
        for r in 0..self.rows {
            let drow = d.row_slice(r);
            for (j, w) in self.row(r) {
                let orow = &mut out[j * c..(j + 1) * c];
                for (o, &v) in orow.iter_mut().zip(drow) {
                    *o += w * v;
                }
            }
        }
        Tensor::matrix(self.cols, c, out).expect("consistent shape")
    }
}

/// Weighted kernel-integrand contraction.
///
/// Given kernel values `K` of shape `[pairs, n*m]` (each row a row-major
/// `n x m` matrix) and integrand values `F` of shape `[nodes, batch*m]`,
/// produces `out[t, b*n + i] = Σ_p w_p Σ_k K[p, i*m + k] F[s_p, b*m + k]`
/// over all pairs `p` with target row `t_p = t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairContraction {
    pub targets: usize,
    pub nodes: usize,
    pub n: usize,
    pub m: usize,
    /// `(target row, node row, weight)` per pair, in kernel-row order.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl PairContraction {
    fn check(&self, k: &Tensor, f: &Tensor) -> Result<usize> {
        let nm = self.n * self.m;
        if k.rank() != 2 || k.rows() != self.pairs.len() || k.cols() != nm {
            return Err(Error::shape(
                "pair_contract",
                format!(
                    "kernel values {:?}, expected [{}, {nm}]",
                    k.shape(),
                    self.pairs.len()
                ),
            ));
        }
        if f.rank() != 2 || f.rows() != self.nodes || !f.cols().is_multiple_of(self.m) {
            return Err(Error::shape(
                "pair_contract",
                format!(
                    "integrand values {:?}, expected [{}, batch*{}]",
                    f.shape(),
                    self.nodes,
                    self.m
                ),
            ));
        }
        Ok(f.cols() / self.m)
    }

    fn forward(&self, k: &Tensor, f: &Tensor) -> Result<Tensor> {
        let batch = self.check(k, f)?;
        let (n, m) = (self.n, self.m);
        let width = batch * n;
        let mut out = vec![0.0; self.targets * width];
        for (p, &(t, s, w)) in self.pairs.iter().enumerate() {
            let kr = k.row_slice(p);
            let fr = f.row_slice(s);
            let orow = &mut out[t * width..(t + 1) * width];
            for b in 0..batch {
                let fb = &fr[b * m..(b + 1) * m];
                for i in 0..n {
                    let ki = &kr[i * m..(i + 1) * m];
                    let dot: f64 = ki.iter().zip(fb).map(|(a, c)| a * c).sum();
                    orow[b * n + i] += w * dot;
                }
            }
        }
        Tensor::matrix(self.targets, width, out)
    }

    fn backward(&self, k: &Tensor, f: &Tensor, d: &Tensor) -> (Tensor, Tensor) {
        let batch = f.cols() / self.m;
        let (n, m) = (self.n, self.m);
        let mut dk = vec![0.0; k.numel()];
        let mut df = vec![0.0; f.numel()];
        let fcols = f.cols();
        for (p, &(t, s, w)) in self.pairs.iter().enumerate() {
            let kr = k.row_slice(p);
            let fr = f.row_slice(s);
            let dr = d.row_slice(t);
            let dkr = &mut dk[p * n * m..(p + 1) * n * m];
            let dfr = &mut df[s * fcols..(s + 1) * fcols];
            for b in 0..batch {
                for i in 0..n {
                    let g = w * dr[b * n + i];
                    if g == 0.0 {
                        continue;
                    }
                    for kk in 0..m {
                        dkr[i * m + kk] += g * fr[b * m + kk];
                        dfr[b * m + kk] += g * kr[i * m + kk];
                    }
                }
            }
        }
        (
            Tensor::new(k.shape().to_vec(), dk).expect("shape"),
            Tensor::new(f.shape().to_vec(), df).expect("shape"),
        )
    }
}

/// A smooth map applied independently to every row of a matrix, with an
/// analytic Jacobian. Used for closed-form dynamics and integrands.
pub trait RowFunction: Send + Sync + std::fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `output_dim x input_dim` Jacobian at `x`.
    fn jacobian(&self, x: &[f64], jac: &mut [f64]);
}

fn row_map_forward(f: &dyn RowFunction, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.cols() != f.input_dim() {
        return Err(Error::shape(
            "row_map",
            format!("input {:?}, expected [rows, {}]", x.shape(), f.input_dim()),
        ));
    }
    let (rows, q) = (x.rows(), f.output_dim());
    let mut out = vec![0.0; rows * q];
    for (r, o) in out.chunks_mut(q.max(1)).enumerate().take(rows) {
        f.eval(x.row_slice(r), o);
    }
    Tensor::matrix(rows, q, out)
}

fn row_map_backward(f: &dyn RowFunction, x: &Tensor, grad: &Tensor) -> Tensor {
    let (p, q) = (f.input_dim(), f.output_dim());
    let mut jac = vec![0.0; p * q];
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        f.jacobian(x.row_slice(r), &mut jac);
        let g = grad.row_slice(r);
        let o = &mut out[r * p..(r + 1) * p];
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (oj, &jij) in o.iter_mut().zip(&jac[i * p..(i + 1) * p]) {
                *oj += gi * jij;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape")
}

/// The closed set of differentiable primitives.
#[derive(Debug, Clone)]
pub enum Primitive {
    Matmul,
    Add,
    Sub,
    Scale(f64),
    Mul,
    Tanh,
    Cosh,
    Sinh,
    Clamp { lo: f64, hi: f64 },
    Sum,
    WeightedSum(Vec<f64>),
    Reshape(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// `[r, c] + [c]` with the bias broadcast over rows.
    AddBias,
    SparseMatmul(Arc<SparseMatrix>),
    PairContract(Arc<PairContraction>),
    RowMap(Arc<dyn RowFunction>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Scale(_) => "scale",
            Primitive::Mul => "mul",
            Primitive::Tanh => "elementwise_tanh",
            Primitive::Cosh => "elementwise_cosh",
            Primitive::Sinh => "elementwise_sinh",
            Primitive::Clamp { .. } => "clamp",
            Primitive::Sum => "sum",
            Primitive::WeightedSum(_) => "weighted_sum",
            Primitive::Reshape(_) => "reshape",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::AddBias => "add_bias",
            Primitive::SparseMatmul(_) => "sparse_matmul",
            Primitive::PairContract(_) => "pair_contract",
            Primitive::RowMap(_) => "row_map",
        }
    }

    fn arity_ok(&self, count: usize) -> bool {
        match self {
            Primitive::Matmul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::AddBias
            | Primitive::PairContract(_) => count == 2,
            Primitive::WeightedSum(w) => count == w.len() && count > 0,
            Primitive::Concat { .. } => count > 0,
            _ => count == 1,
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if !self.arity_ok(inputs.len()) {
            return Err(Error::shape(
                self.name(),
                format!("wrong number of operands: {}", inputs.len()),
            ));
        }
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    self.name(),
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            Ok(())
        };
        match self {
            Primitive::Matmul => matmul(inputs[0], inputs[1]),
            Primitive::Add => {
                same_shape(inputs[0], inputs[1])?;
                Ok(inputs[0].zip_map(inputs[1], |a, b| a + b))
            }
            Primitive::Sub => {
                same_shape(inputs[0], inputs[1])?;
                Ok(inputs[0].zip_map(inputs[1], |a, b| a - b))
            }
            Primitive::Mul => {
                same_shape(inputs[0], inputs[1])?;
                Ok(inputs[0].zip_map(inputs[1], |a, b| a * b))
            }
            Primitive::Scale(c) => Ok(inputs[0].map(|v| c * v)),
            Primitive::Tanh => Ok(inputs[0].map(f64::tanh)),
            Primitive::Cosh => Ok(inputs[0].map(f64::cosh)),
            Primitive::Sinh => Ok(inputs[0].map(f64::sinh)),
            Primitive::Clamp { lo, hi } => Ok(inputs[0].map(|v| v.clamp(*lo, *hi))),
            Primitive::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
            Primitive::WeightedSum(w) => {
                let first = inputs[0];
                let mut data = vec![0.0; first.numel()];
                for (x, &wi) in inputs.iter().zip(w) {
                    same_shape(first, x)?;
                    for (o, &v) in data.iter_mut().zip(x.data()) {
                        *o += wi * v;
                    }
                }
                Tensor::new(first.shape().to_vec(), data)
            }
            Primitive::Reshape(shape) => inputs[0].clone().reshaped(shape),
            Primitive::Concat { axis } => concat(inputs, *axis),
            Primitive::Slice { axis, start, end } => slice(inputs[0], *axis, *start, *end),
            Primitive::AddBias => {
                let (x, b) = (inputs[0], inputs[1]);
                if x.rank() != 2 || b.numel() != x.cols() {
                    return Err(Error::shape(
                        "add_bias",
                        format!("{:?} + {:?}", x.shape(), b.shape()),
                    ));
                }
                let c = x.cols();
                let mut data = x.data().to_vec();
                for row in data.chunks_mut(c) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Tensor::new(x.shape().to_vec(), data)
            }
            Primitive::SparseMatmul(a) => a.apply(inputs[0]),
            Primitive::PairContract(plan) => plan.forward(inputs[0], inputs[1]),
            Primitive::RowMap(f) => row_map_forward(f.as_ref(), inputs[0]),
        }
    }

    /// Pullback: cotangents for each operand given the output cotangent.
    ///
    /// `needs[i]` marks operands whose cotangent is wanted; others may be `None`.
    pub(crate) fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        match self {
            Primitive::Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                vec![
                    want(0).then(|| matmul_nt(grad, b)),
                    want(1).then(|| matmul_tn(a, grad)),
                ]
            }
            Primitive::Add => vec![want(0).then(|| grad.clone()), want(1).then(|| grad.clone())],
            Primitive::Sub => vec![
                want(0).then(|| grad.clone()),
                want(1).then(|| grad.map(|v| -v)),
            ],
            Primitive::Mul => vec![
                want(0).then(|| grad.zip_map(inputs[1], |g, b| g * b)),
                want(1).then(|| grad.zip_map(inputs[0], |g, a| g * a)),
            ],
            Primitive::Scale(c) => vec![Some(grad.map(|v| c * v))],
            Primitive::Tanh => vec![Some(grad.zip_map(output, |g, y| g * (1.0 - y * y)))],
            Primitive::Cosh => vec![Some(grad.zip_map(inputs[0], |g, x| g * x.sinh()))],
            Primitive::Sinh => vec![Some(grad.zip_map(inputs[0], |g, x| g * x.cosh()))],
            Primitive::Clamp { lo, hi } => vec![Some(grad.zip_map(inputs[0], |g, x| {
                if x > *lo && x < *hi {
                    g
                } else {
                    0.0
                }
            }))],
            Primitive::Sum => {
                let g = grad.item();
                vec![Some(Tensor::filled(inputs[0].shape(), g))]
            }
            Primitive::WeightedSum(w) => w
                .iter()
                .enumerate()
                .map(|(i, &wi)| want(i).then(|| grad.map(|v| wi * v)))
                .collect(),
            Primitive::Reshape(_) => vec![Some(
                grad.clone()
                    .reshaped(inputs[0].shape())
                    .expect("reshape pullback"),
            )],
            Primitive::Concat { axis } => split_concat(inputs, grad, *axis)
                .into_iter()
                .enumerate()
                .map(|(i, t)| want(i).then_some(t))
                .collect(),
            Primitive::Slice { axis, start, end } => {
                vec![Some(unslice(inputs[0], grad, *axis, *start, *end))]
            }
            Primitive::AddBias => {
                let db = want(1).then(|| {
                    let c = grad.cols();
                    let mut acc = vec![0.0; c];
                    for row in grad.data().chunks(c) {
                        for (a, &g) in acc.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::new(inputs[1].shape().to_vec(), acc).expect("bias shape")
                });
                vec![want(0).then(|| grad.clone()), db]
            }
            Primitive::SparseMatmul(a) => vec![Some(a.apply_transposed(grad))],
            Primitive::PairContract(plan) => {
                let (dk, df) = plan.backward(inputs[0], inputs[1], grad);
                vec![want(0).then_some(dk), want(1).then_some(df)]
            }
            Primitive::RowMap(f) => vec![Some(row_map_backward(f.as_ref(), inputs[0], grad))],
        }
    }
}

fn require_rank2(name: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::shape(name, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok(())
}

fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    for t in inputs {
        require_rank2("concat", t)?;
    }
    match axis {
        0 => {
            let c = inputs[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for t in inputs {
                if t.cols() != c {
                    return Err(Error::shape(
                        "concat",
                        format!("axis 0 needs equal columns: {:?} vs {:?}", inputs[0].shape(), t.shape()),
                    ));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, c, data)
        }
        1 => {
            let r = inputs[0].rows();
            let mut cols = 0;
            for t in inputs {
                if t.rows() != r {
                    return Err(Error::shape(
                        "concat",
                        format!("axis 1 needs equal rows: {:?} vs {:?}", inputs[0].shape(), t.shape()),
                    ));
                }
                cols += t.cols();
            }
            let mut data = Vec::with_capacity(r * cols);
            for i in 0..r {
                for t in inputs {
                    data.extend_from_slice(t.row_slice(i));
                }
            }
            Tensor::matrix(r, cols, data)
        }
        _ => Err(Error::shape("concat", format!("axis {axis} out of range"))),
    }
}

fn split_concat(inputs: &[&Tensor], grad: &Tensor, axis: usize) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(inputs.len());
    if axis == 0 {
        let c = grad.cols();
        let mut row = 0;
        for t in inputs {
            let r = t.rows();
            let data = grad.data()[row * c..(row + r) * c].to_vec();
            out.push(Tensor::matrix(r, c, data).expect("split"));
            row += r;
        }
    } else {
        let r = grad.rows();
        let mut col = 0;
        for t in inputs {
            let c = t.cols();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                data.extend_from_slice(&grad.row_slice(i)[col..col + c]);
            }
            out.push(Tensor::matrix(r, c, data).expect("split"));
            col += c;
        }
    }
    out
}

fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    require_rank2("slice", x)?;
    let extent = match axis {
        0 => x.rows(),
        1 => x.cols(),
        _ => return Err(Error::shape("slice", format!("axis {axis} out of range"))),
    };
    if start > end || end > extent {
        return Err(Error::shape(
            "slice",
            format!("range {start}..{end} on axis {axis} of {:?}", x.shape()),
        ));
    }
    if axis == 0 {
        let c = x.cols();
        Tensor::matrix(end - start, c, x.data()[start * c..end * c].to_vec())
    } else {
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for i in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        Tensor::matrix(x.rows(), end - start, data)
    }
}

fn unslice(x: &Tensor, grad: &Tensor, axis: usize, start: usize, end: usize) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    let c = x.cols();
    let data = out.data_mut();
    if axis == 0 {
        data[start * c..end * c].copy_from_slice(grad.data());
    } else {
        let w = end - start;
        for i in 0..x.rows() {
            data[i * c + start..i * c + end].copy_from_slice(&grad.data()[i * w..(i + 1) * w]);
        }
    }
    out
}
