//! Markovian/non-Markovian decomposition, latent embeddings through the
//! integrand, and nearest-neighbour and PCA scoring.

mod knn;
mod pca;

pub use knn::{knn_classify, knn_regress};
pub use pca::{pca_project, Pca};

use std::fmt::Write as _;

use crate::ad::{Eager, Tensor};
use crate::datasets::format_f64;
use crate::error::{Error, Result};
use crate::numerics::GridFunction;
use crate::solver::{rates_at_nodes, solve_ivp, IdeSystem, SolverConfig};

/// Both rate terms of the dynamics along a path, on its grid nodes.
///
/// Paths are displacements: each rate integrated by the trapezoid rule from
/// zero, so `y0 + markovian_path + nonmarkovian_path` tracks the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub times: Vec<f64>,
    /// `f(t, y(t))`, `[T, n]`.
    pub markovian_rate: Tensor,
    /// Integral term, `[T, n]`; zero when `K ≡ 0`.
    pub nonmarkovian_rate: Tensor,
    pub total_rate: Tensor,
    pub markovian_path: Tensor,
    pub nonmarkovian_path: Tensor,
    pub converged: bool,
}

fn cumulative_trapezoid(times: &[f64], rate: &Tensor) -> Tensor {
    let (t, n) = (rate.rows(), rate.cols());
    let mut out = vec![0.0; t * n];
    for k in 1..t {
        let h = times[k] - times[k - 1];
        for i in 0..n {
            out[k * n + i] = out[(k - 1) * n + i] + 0.5 * h * (rate.get(k - 1, i) + rate.get(k, i));
        }
    }
    Tensor::matrix(t, n, out).expect("shape")
}

impl Decomposition {
    pub fn dim(&self) -> usize {
        self.markovian_rate.cols()
    }

    /// Largest `|markov + nonmarkov − total|` over nodes and components.
    pub fn rate_sum_error(&self) -> f64 {
        self.markovian_rate
            .data()
            .iter()
            .zip(self.nonmarkovian_rate.data())
            .zip(self.total_rate.data())
            .map(|((a, b), c)| (a + b - c).abs())
            .fold(0.0, f64::max)
    }

    /// Rows at the given node indices.
    pub fn select(&self, indices: &[usize]) -> Decomposition {
        let pick = |t: &Tensor| {
            let n = t.cols();
            let data = indices.iter().flat_map(|&k| t.row_slice(k).to_vec()).collect();
            Tensor::matrix(indices.len(), n, data).expect("shape")
        };
        Decomposition {
            times: indices.iter().map(|&k| self.times[k]).collect(),
            markovian_rate: pick(&self.markovian_rate),
            nonmarkovian_rate: pick(&self.nonmarkovian_rate),
            total_rate: pick(&self.total_rate),
            markovian_path: pick(&self.markovian_path),
            nonmarkovian_path: pick(&self.nonmarkovian_path),
            converged: self.converged,
        }
    }

    fn table(&self, prefix: [&str; 3], a: &Tensor, b: &Tensor, c: &Tensor) -> String {
        let n = self.dim();
        let mut out = String::from("t");
        for p in prefix {
            for i in 0..n {
                write!(out, ",{p}_{i}").expect("string write");
            }
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format_f64(*t));
            for m in [a, b, c] {
                for v in m.row_slice(k) {
                    out.push(',');
                    out.push_str(&format_f64(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    /// `t,markov_*,nonmarkov_*,total_*` rates.
    pub fn rates_csv(&self) -> String {
        self.table(
            ["markov", "nonmarkov", "total"],
            &self.markovian_rate,
            &self.nonmarkovian_rate,
            &self.total_rate,
        )
    }

    /// Displacements from zero: `t,markov_disp_*,nonmarkov_disp_*,total_disp_*`.
    pub fn paths_csv(&self) -> String {
        let mut total = self.markovian_path.clone();
        for (o, v) in total.data_mut().iter_mut().zip(self.nonmarkovian_path.data()) {
            *o += v;
        }
        self.table(
            ["markov_disp", "nonmarkov_disp", "total_disp"],
            &self.markovian_path,
            &self.nonmarkovian_path,
            &total,
        )
    }
}

/// Split the dynamics of `system` along the path `traj`.
pub fn decompose_path(system: &IdeSystem, traj: &GridFunction, config: &SolverConfig, converged: bool) -> Result<Decomposition> {
    let (local, integral) = rates_at_nodes(system, traj, config)?;
    let shape = traj.values().shape().to_vec();
    let markovian_rate = local.unwrap_or_else(|| Tensor::zeros(&shape));
    let nonmarkovian_rate = integral.unwrap_or_else(|| Tensor::zeros(&shape));
    let mut total_rate = markovian_rate.clone();
    for (o, v) in total_rate.data_mut().iter_mut().zip(nonmarkovian_rate.data()) {
        *o += v;
    }
    let times = traj.grid().nodes();
    Ok(Decomposition {
        markovian_path: cumulative_trapezoid(&times, &markovian_rate),
        nonmarkovian_path: cumulative_trapezoid(&times, &nonmarkovian_rate),
        times,
        markovian_rate,
        nonmarkovian_rate,
        total_rate,
        converged,
    })
}

/// Solve from `y0` and split the dynamics along the solution.
pub fn decompose_system(system: &IdeSystem, y0: &[f64], t0: f64, t1: f64, config: &SolverConfig) -> Result<Decomposition> {
    let sol = solve_ivp(system, y0, t0, t1, config)?;
    decompose_path(system, &sol.y, config, sol.converged)
}

/// `F(y(t))` at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub times: Vec<f64>,
    /// `[T, m]`.
    pub points: Tensor,
}

impl Embedding {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.points.cols() {
            write!(out, ",z{i}").expect("string write");
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format_f64(*t));
            for v in self.points.row_slice(k) {
                out.push(',');
                out.push_str(&format_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Apply the integrand row-wise to `[T, n]` states.
pub fn embed_states(system: &IdeSystem, times: &[f64], states: &Tensor) -> Result<Embedding> {
    if states.rank() != 2 || states.cols() != system.state_dim() || states.rows() != times.len() {
        return Err(Error::invalid(format!(
            "states {:?} do not match {} times of dimension {}",
            states.shape(),
            times.len(),
            system.state_dim()
        )));
    }
    let mut g = Eager::new();
    let bound = system.bind(&mut g, false);
    let points = system.integrand_forward(&mut g, &bound, states)?;
    Ok(Embedding {
        times: times.to_vec(),
        points,
    })
}

/// `1 − SSE/SST` pooled over components, SST about each component's mean.
/// `None` when the truth has zero variance.
pub fn r_squared(pred: &Tensor, truth: &Tensor) -> Result<Option<f64>> {
    if pred.shape() != truth.shape() || truth.rank() != 2 || truth.rows() == 0 {
        return Err(Error::invalid(format!(
            "prediction {:?} and truth {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    let (t, n) = (truth.rows(), truth.cols());
    let (mut sse, mut sst) = (0.0, 0.0);
    for i in 0..n {
        let mean = (0..t).map(|k| truth.get(k, i)).sum::<f64>() / t as f64;
        for k in 0..t {
            sse += (pred.get(k, i) - truth.get(k, i)).powi(2);
            sst += (truth.get(k, i) - mean).powi(2);
        }
    }
    Ok((sst > 0.0).then(|| 1.0 - sse / sst))
}

/// Stack `[T_i, n]` tensors row-wise.
pub fn stack_rows<'a>(parts: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for p in parts {
        if *cols.get_or_insert(p.cols()) != p.cols() {
            return Err(Error::invalid("cannot stack tensors of different widths"));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, cols.unwrap_or(0), data)
}

/// R² of fitted decompositions against ground truth, pooled over curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionScores {
    pub total_rate: Option<f64>,
    pub markovian_rate: Option<f64>,
    pub nonmarkovian_rate: Option<f64>,
    pub markovian_path: Option<f64>,
    pub nonmarkovian_path: Option<f64>,
}

impl DecompositionScores {
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        format!(
            "r2_total_rate {}\nr2_markovian_rate {}\nr2_nonmarkovian_rate {}\nr2_markovian_path {}\nr2_nonmarkovian_path {}\n",
            fmt(self.total_rate),
            fmt(self.markovian_rate),
            fmt(self.nonmarkovian_rate),
            fmt(self.markovian_path),
            fmt(self.nonmarkovian_path)
        )
    }
}

pub fn decomposition_r2(fitted: &[Decomposition], truth: &[Decomposition]) -> Result<DecompositionScores> {
    if fitted.len() != truth.len() || fitted.is_empty() {
        return Err(Error::invalid("need one ground-truth decomposition per fitted one"));
    }
    let score = |pick: fn(&Decomposition) -> &Tensor| -> Result<Option<f64>> {
        let p = stack_rows(fitted.iter().map(pick))?;
        let t = stack_rows(truth.iter().map(pick))?;
        r_squared(&p, &t)
    };
    Ok(DecompositionScores {
        total_rate: score(|d| &d.total_rate)?,
        markovian_rate: score(|d| &d.markovian_rate)?,
        nonmarkovian_rate: score(|d| &d.nonmarkovian_rate)?,
        markovian_path: score(|d| &d.markovian_path)?,
        nonmarkovian_path: score(|d| &d.nonmarkovian_path)?,
    })
}

/// Leave-one-out k-NN regression of time from an embedding and from a PCA
/// projection of the raw states with as many components as the embedding
/// has, capped at the state dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingScores {
    pub k: usize,
    pub pca_dims: usize,
    pub embedding_r2: Option<f64>,
    pub pca_r2: Option<f64>,
}

impl EmbeddingScores {
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        format!(
            "k {}\npca_dims {}\nknn_time_r2_embedding {}\nknn_time_r2_pca {}\n",
            self.k,
            self.pca_dims,
            fmt(self.embedding_r2),
            fmt(self.pca_r2)
        )
    }
}

pub fn score_embedding(embeddings: &[Embedding], states: &[&Tensor], k: usize) -> Result<EmbeddingScores> {
    if embeddings.len() != states.len() || embeddings.is_empty() {
        return Err(Error::invalid("need one state matrix per embedding"));
    }
    let points = stack_rows(embeddings.iter().map(|e| &e.points))?;
    let raw = stack_rows(states.iter().copied())?;
    let times: Vec<f64> = embeddings.iter().flat_map(|e| e.times.iter().copied()).collect();
    let pca_dims = points.cols().min(raw.cols());
    let pca = pca_project(&raw, pca_dims)?;
    Ok(EmbeddingScores {
        k,
        pca_dims,
        embedding_r2: knn_regress(&points, &times, k)?,
        pca_r2: knn_regress(&pca.points, &times, k)?,
    })
}

#[cfg(test)]
mod tests;
