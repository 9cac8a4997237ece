use crate::ad::Tensor;
use crate::error::{Error, Result};

/// Leave-one-out neighbours of `i`, nearest first; equal distances keep index order.
fn neighbours(points: &Tensor, i: usize, k: usize) -> Vec<usize> {
    let xi = points.row_slice(i);
    let mut d: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&j| j != i)
        .map(|j| {
            let dist = points.row_slice(j).iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (dist, j)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

fn check(points: &Tensor, len: usize, k: usize) -> Result<()> {
    if points.rank() != 2 || points.rows() != len {
        return Err(Error::invalid(format!("{:?} points for {len} targets", points.shape())));
    }
    if k == 0 || len < k + 1 {
        return Err(Error::invalid(format!("k = {k} needs at least {} points, got {len}", k + 1)));
    }
    if !points.is_finite() {
        return Err(Error::invalid("points contain non-finite values"));
    }
    Ok(())
}

/// Leave-one-out k-NN regression R² under the Euclidean metric; `None`
/// when the targets have zero variance.
pub fn knn_regress(points: &Tensor, targets: &[f64], k: usize) -> Result<Option<f64>> {
    check(points, targets.len(), k)?;
    let n = targets.len();
    let mean = targets.iter().sum::<f64>() / n as f64;
    let sst: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return Ok(None);
    }
    let sse: f64 = (0..n)
        .map(|i| {
            let nb = neighbours(points, i, k);
            let pred = nb.iter().map(|&j| targets[j]).sum::<f64>() / k as f64;
            (pred - targets[i]) * (pred - targets[i])
        })
        .sum();
    Ok(Some(1.0 - sse / sst))
}

/// Leave-one-out k-NN majority-vote accuracy; a tied vote goes to the
/// tied label whose member is nearest.
pub fn knn_classify(points: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    check(points, labels.len(), k)?;
    let n = labels.len();
    let correct = (0..n)
        .filter(|&i| {
            let nb = neighbours(points, i, k);
            let mut votes: Vec<(usize, usize)> = Vec::new();
            for &j in &nb {
                match votes.iter_mut().find(|(l, _)| *l == labels[j]) {
                    Some(v) => v.1 += 1,
                    None => votes.push((labels[j], 1)),
                }
            }
            // `votes` is in order of first appearance, i.e. nearest member first.
            let best = votes.iter().map(|v| v.1).max().unwrap_or(0);
            let label = votes.iter().find(|v| v.1 == best).map(|v| v.0);
            label == Some(labels[i])
        })
        .count();
    Ok(correct as f64 / n as f64)
}
