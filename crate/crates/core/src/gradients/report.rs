use std::fmt::Write as _;

use super::{adjoint, unrolled, Problem};
use crate::ad::ParamVector;
use crate::error::{Error, Result};
use crate::solver::{IdeSystem, Passes, SolverConfig};

/// Agreement between a gradient and a reference gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`.
    pub rel_err: f64,
    /// 1 when both vectors vanish.
    pub cosine: f64,
    /// Worst `|a_i − b_i| / max(|a_i|, |b_i|, 1e-3 · max(‖a‖∞, ‖b‖∞), 1e-12)`.
    pub max_component_rel: f64,
}

pub fn compare(a: &ParamVector, b: &ParamVector) -> Comparison {
    let (a, b) = (a.values(), b.values());
    assert_eq!(a.len(), b.len(), "gradient layouts differ");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let cosine = if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    };
    let inf = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-3 * inf).max(1e-12);
    let max_component_rel = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max);
    Comparison {
        rel_err: diff / na.max(nb).max(1e-12),
        cosine,
        max_component_rel,
    }
}

/// One line of the gradient comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub mode: String,
    pub reference: String,
    pub loss: f64,
    pub grad_norm: f64,
    pub comparison: Comparison,
    /// Bound on `rel_err`, if any.
    pub tolerance: Option<f64>,
    /// Bound from below on `cosine`, if any.
    pub min_cosine: Option<f64>,
}

impl ReportRow {
    pub fn passed(&self) -> bool {
        self.tolerance.is_none_or(|t| self.comparison.rel_err <= t)
            && self.min_cosine.is_none_or(|c| self.comparison.cosine >= c)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientReport {
    pub rows: Vec<ReportRow>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(ReportRow::passed)
    }

    /// Failing row with the largest error relative to its bound.
    pub fn worst(&self) -> Option<&ReportRow> {
        let excess = |r: &ReportRow| {
            let t = r.tolerance.map_or(0.0, |t| r.comparison.rel_err / t);
            let c = r.min_cosine.map_or(0.0, |c| (1.0 - r.comparison.cosine) / (1.0 - c).max(1e-12));
            t.max(c)
        };
        self.rows
            .iter()
            .filter(|r| !r.passed())
            .max_by(|a, b| excess(a).total_cmp(&excess(b)))
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<24} {:<10} {:<10} {:>12} {:>12} {:>10} {:>12} {:>12} {:>6}\n",
            "system", "mode", "vs", "loss", "grad_norm", "cosine", "rel_err", "max_comp", "ok"
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:<24} {:<10} {:<10} {:>12.4e} {:>12.4e} {:>10.6} {:>12.4e} {:>12.4e} {:>6}",
                r.system,
                r.mode,
                r.reference,
                r.loss,
                r.grad_norm,
                r.comparison.cosine,
                r.comparison.rel_err,
                r.comparison.max_component_rel,
                if r.passed() { "yes" } else { "NO" }
            )
            .expect("string write");
        }
        out
    }
}

/// Adjoint against unrolled at one kernel magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    /// Largest `|K_ij(t, s)|` over the solve window.
    pub kernel_sup: f64,
    pub comparison: Comparison,
}

/// Scale the kernel net's output layer by `scale`.
pub fn scale_kernel(system: &IdeSystem, scale: f64) -> Result<IdeSystem> {
    let params = system.params();
    let last = params
        .segments()
        .iter()
        .filter_map(|s| s.name.strip_prefix("kernel.layer"))
        .filter_map(|rest| rest.split('.').next()?.parse::<usize>().ok())
        .max()
        .ok_or_else(|| Error::invalid("system has no kernel network"))?;
    let prefix = format!("kernel.layer{last}.");
    let mut values = params.values().to_vec();
    for seg in params.segments().iter().filter(|s| s.name.starts_with(&prefix)) {
        for v in &mut values[seg.range()] {
            *v *= scale;
        }
    }
    system.with_params(&values)
}

fn kernel_sup(system: &IdeSystem, t0: f64, t1: f64) -> Result<f64> {
    let mut sup = 0.0f64;
    for i in 0..=10 {
        for j in 0..=10 {
            let t = t0 + (t1 - t0) * i as f64 / 10.0;
            let s = t0 + (t1 - t0) * j as f64 / 10.0;
            sup = sup.max(system.kernel_matrix(t, s)?.max_abs());
        }
    }
    Ok(sup)
}

/// Divergence of the adjoint from the unrolled gradient as the kernel grows.
pub fn kernel_scale_sweep(
    system: &IdeSystem,
    problem: &Problem,
    config: &SolverConfig,
    scales: &[f64],
) -> Result<Vec<SweepRow>> {
    scales
        .iter()
        .map(|&scale| {
            let scaled = scale_kernel(system, scale)?;
            let exact = unrolled(&scaled, problem, config, Passes::Adaptive)?;
            let adj = adjoint(&scaled, problem, config)?;
            Ok(SweepRow {
                scale,
                kernel_sup: kernel_sup(&scaled, problem.t0, problem.t1)?,
                comparison: compare(&adj.grad, &exact.grad),
            })
        })
        .collect()
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>10} {:>12} {:>10} {:>12}\n", "scale", "kernel_sup", "cosine", "rel_err");
    for r in rows {
        writeln!(
            out,
            "{:>10.4e} {:>12.4e} {:>10.6} {:>12.4e}",
            r.scale, r.kernel_sup, r.comparison.cosine, r.comparison.rel_err
        )
        .expect("string write");
    }
    out
}
