use nalgebra::DMatrix;

use crate::ad::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `[T, dims]` scores.
    pub points: Tensor,
    /// `[dims, n]` unit directions, largest-magnitude loading positive.
    pub components: Tensor,
    pub mean: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    /// Map scores back to the original coordinates.
    pub fn reconstruct(&self) -> Tensor {
        let (t, d) = (self.points.rows(), self.points.cols());
        let n = self.mean.len();
        let mut out = vec![0.0; t * n];
        for r in 0..t {
            for j in 0..n {
                let mut v = self.mean[j];
                for c in 0..d {
                    v += self.points.get(r, c) * self.components.get(c, j);
                }
                out[r * n + j] = v;
            }
        }
        Tensor::matrix(t, n, out).expect("shape")
    }
}

/// Mean-centred projection of `[T, n]` states onto the top `dims`
/// singular directions. Errors when the centred data has rank below `dims`.
pub fn pca_project(states: &Tensor, dims: usize) -> Result<Pca> {
    if states.rank() != 2 {
        return Err(Error::invalid("states must be a matrix"));
    }
    let (t, n) = (states.rows(), states.cols());
    if dims == 0 || dims > n || t <= dims {
        return Err(Error::invalid(format!("cannot project {t} x {n} data onto {dims} dimensions")));
    }
    let mean: Vec<f64> = (0..n).map(|j| (0..t).map(|r| states.get(r, j)).sum::<f64>() / t as f64).collect();
    let centred = DMatrix::from_fn(t, n, |r, j| states.get(r, j) - mean[j]);
    let svd = centred.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let top = svd.singular_values[order[0]];
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * top.max(1e-300)).count();
    if total == 0.0 || rank < dims {
        return Err(Error::invalid(format!("data has rank {rank}, fewer than {dims} dimensions")));
    }
    let mut components = vec![0.0; dims * n];
    let mut ratios = Vec::with_capacity(dims);
    for (c, &idx) in order.iter().take(dims).enumerate() {
        let row: Vec<f64> = (0..n).map(|j| v_t[(idx, j)]).collect();
        let lead = row.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            components[c * n + j] = sign * row[j];
        }
        let s = svd.singular_values[idx];
        ratios.push(s * s / total);
    }
    let comp = DMatrix::from_row_slice(dims, n, &components);
    let scores = &centred * comp.transpose();
    let points: Vec<f64> = (0..t).flat_map(|r| (0..dims).map(move |c| (r, c))).map(|(r, c)| scores[(r, c)]).collect();
    Ok(Pca {
        points: Tensor::matrix(t, dims, points)?,
        components: Tensor::matrix(dims, n, components)?,
        mean,
        explained_variance_ratio: ratios,
    })
}
