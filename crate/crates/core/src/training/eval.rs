use std::fmt::Write;

use super::{linspace, Checkpoint};
use crate::ad::Tensor;
use crate::analysis::{decompose_path, embed_states, r_squared, Decomposition, Embedding};
use crate::datasets::{format_f64, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::GridFunction;
use crate::solver::{solve_ivp, Solution, SolverConfig};

type Rows = Vec<Vec<f64>>;

fn check_dim(ckpt: &Checkpoint, traj: &Trajectory) -> Result<()> {
    if traj.dim() != ckpt.model.state_dim {
        return Err(Error::invalid(format!(
            "trajectory has dimension {}, checkpoint {}",
            traj.dim(),
            ckpt.model.state_dim
        )));
    }
    Ok(())
}

/// Solve in normalized time over `times` (original units).
fn solve_over(ckpt: &Checkpoint, y0: &[f64], times: &[f64]) -> Result<(Solution, Vec<f64>, SolverConfig)> {
    let map = ckpt.time_map;
    let u: Vec<f64> = times.iter().map(|&t| map.to_normalized(t)).collect();
    let config = ckpt.config.solver_for(&u);
    let sol = solve_ivp(&ckpt.system, y0, u[0], u[u.len() - 1], &config)?;
    Ok((sol, u, config))
}

fn sample(ckpt: &Checkpoint, y: &GridFunction, u: &[f64]) -> Result<Trajectory> {
    ckpt.time_map.denormalize(&Trajectory::sample(y, u)?)
}

/// Model solution from `traj`'s initial condition at `traj`'s times.
pub fn predict(ckpt: &Checkpoint, traj: &Trajectory) -> Result<(Trajectory, bool)> {
    check_dim(ckpt, traj)?;
    let (sol, u, _) = solve_over(ckpt, traj.initial(), traj.times())?;
    Ok((sample(ckpt, &sol.y, &u)?, sol.converged))
}

/// Single solve from an unseen `y0` at `points` evenly spaced times.
pub fn predict_from_ic(ckpt: &Checkpoint, y0: &[f64], t0: f64, t1: f64, points: usize) -> Result<(Trajectory, bool)> {
    if y0.len() != ckpt.model.state_dim {
        return Err(Error::invalid("initial condition does not match the checkpoint dimension"));
    }
    if points < 2 || !(t1 > t0) {
        return Err(Error::invalid("prediction needs t1 > t0 and at least 2 points"));
    }
    let (sol, u, _) = solve_over(ckpt, y0, &linspace(t0, t1, points))?;
    Ok((sample(ckpt, &sol.y, &u)?, sol.converged))
}

/// Fit on a prefix continued to later times.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    /// Prefix times followed by the future times.
    pub trajectory: Trajectory,
    /// Index of the first extrapolated row.
    pub horizon_start: usize,
    pub converged: bool,
}

impl Extrapolation {
    pub fn horizon(&self) -> usize {
        self.trajectory.len() - self.horizon_start
    }
}

/// Solve from the prefix's initial condition over the prefix and `future` times.
pub fn extrapolate(ckpt: &Checkpoint, prefix: &Trajectory, future: &[f64]) -> Result<Extrapolation> {
    check_dim(ckpt, prefix)?;
    if future.first().is_some_and(|&t| t <= prefix.t1()) {
        return Err(Error::invalid("extrapolation times must follow the prefix"));
    }
    let times: Vec<f64> = prefix.times().iter().chain(future).copied().collect();
    let (sol, u, _) = solve_over(ckpt, prefix.initial(), &times)?;
    Ok(Extrapolation {
        trajectory: sample(ckpt, &sol.y, &u)?,
        horizon_start: prefix.len(),
        converged: sol.converged,
    })
}

/// Mean squared error per extrapolation step `t+1 .. t+H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub mse: Vec<f64>,
    /// Trajectories contributing to each horizon.
    pub counts: Vec<usize>,
    pub converged: bool,
}

impl HorizonReport {
    /// One column per horizon `t+1 .. t+H`, rows `mse` and `count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for h in 1..=self.mse.len() {
            write!(out, ",t+{h}").expect("string write");
        }
        out.push_str("\nmse");
        for m in &self.mse {
            write!(out, ",{}", format_f64(*m)).expect("string write");
        }
        out.push_str("\ncount");
        for c in &self.counts {
            write!(out, ",{c}").expect("string write");
        }
        out.push('\n');
        out
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.mse.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Extrapolate each trajectory from its first `prefix_len` points and score
/// the remaining points by horizon.
pub fn horizon_mse(ckpt: &Checkpoint, trajectories: &[Trajectory], prefix_len: usize) -> Result<HorizonReport> {
    let horizon = trajectories.iter().map(|t| t.len().saturating_sub(prefix_len)).max().unwrap_or(0);
    let mut sse = vec![0.0; horizon];
    let mut counts = vec![0; horizon];
    let mut converged = true;
    for traj in trajectories {
        if traj.len() <= prefix_len {
            continue;
        }
        let prefix = traj.prefix(prefix_len)?;
        let ex = extrapolate(ckpt, &prefix, &traj.times()[prefix_len..])?;
        converged &= ex.converged;
        for h in 0..ex.horizon() {
            let k = prefix_len + h;
            let p = ex.trajectory.states().row_slice(k);
            let o = traj.states().row_slice(k);
            sse[h] += p.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
            counts[h] += 1;
        }
    }
    Ok(HorizonReport {
        mse: sse.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        counts,
        converged,
    })
}

/// Per-point and pooled fit quality.
///
/// Point `i` pools row `i` of every trajectory that evaluates it.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_point_mse: Vec<Option<f64>>,
    /// `None` where the truth has zero variance across trajectories.
    pub per_point_r2: Vec<Option<f64>>,
    pub mse: f64,
    pub r2: Option<f64>,
    pub points: usize,
    pub converged: bool,
}

impl Metrics {
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6e}"));
        let mut out = String::new();
        writeln!(out, "points {}", self.points).expect("string write");
        writeln!(out, "mse {}", fmt(Some(self.mse))).expect("string write");
        writeln!(out, "r2 {}", fmt(self.r2)).expect("string write");
        writeln!(out, "converged {}", self.converged).expect("string write");
        writeln!(out, "{:>6} {:>14} {:>14}", "point", "mse", "r2").expect("string write");
        for (i, (m, r)) in self.per_point_mse.iter().zip(&self.per_point_r2).enumerate() {
            writeln!(out, "{i:>6} {:>14} {:>14}", fmt(*m), fmt(*r)).expect("string write");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), format_f64);
        let mut out = String::from("point,mse,r2\n");
        for (i, (m, r)) in self.per_point_mse.iter().zip(&self.per_point_r2).enumerate() {
            writeln!(out, "{i},{},{}", fmt(*m), fmt(*r)).expect("string write");
        }
        out
    }
}

/// Score model predictions from each trajectory's initial condition.
/// `masks[k][i]` selects the rows of trajectory `k` that are scored.
pub fn evaluate(ckpt: &Checkpoint, trajectories: &[Trajectory], masks: Option<&[Vec<bool>]>) -> Result<Metrics> {
    if trajectories.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if let Some(m) = masks {
        if m.len() != trajectories.len() || m.iter().zip(trajectories).any(|(m, t)| m.len() != t.len()) {
            return Err(Error::invalid("evaluation masks do not match the trajectories"));
        }
    }
    let longest = trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
    // Per time index: (predicted rows, observed rows).
    let mut rows: Vec<(Rows, Rows)> = vec![(Vec::new(), Vec::new()); longest];
    let mut converged = true;
    for (k, traj) in trajectories.iter().enumerate() {
        let (pred, ok) = predict(ckpt, traj)?;
        converged &= ok;
        for i in 0..traj.len() {
            if masks.is_some_and(|m| !m[k][i]) {
                continue;
            }
            rows[i].0.push(pred.states().row_slice(i).to_vec());
            rows[i].1.push(traj.states().row_slice(i).to_vec());
        }
    }
    let mse_of = |p: &[Vec<f64>], o: &[Vec<f64>]| -> f64 {
        let count: usize = o.iter().map(Vec::len).sum();
        p.iter()
            .zip(o)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            / count as f64
    };
    let mut per_point_mse = Vec::with_capacity(longest);
    let mut per_point_r2 = Vec::with_capacity(longest);
    let (mut all_p, mut all_o) = (Vec::new(), Vec::new());
    for (p, o) in rows {
        if o.is_empty() {
            per_point_mse.push(None);
            per_point_r2.push(None);
            continue;
        }
        per_point_mse.push(Some(mse_of(&p, &o)));
        per_point_r2.push(r_squared(&Tensor::from_rows(&p)?, &Tensor::from_rows(&o)?)?);
        all_p.extend(p);
        all_o.extend(o);
    }
    if all_o.is_empty() {
        return Err(Error::invalid("every point is masked out of the evaluation"));
    }
    Ok(Metrics {
        per_point_mse,
        per_point_r2,
        mse: mse_of(&all_p, &all_o),
        r2: r_squared(&Tensor::from_rows(&all_p)?, &Tensor::from_rows(&all_o)?)?,
        points: all_o.len(),
        converged,
    })
}

/// Markovian and memory contributions of the fitted model along its own
/// solution from `traj`'s initial condition, at `traj`'s times in original units.
pub fn decompose(ckpt: &Checkpoint, traj: &Trajectory) -> Result<Decomposition> {
    check_dim(ckpt, traj)?;
    let (sol, u, config) = solve_over(ckpt, traj.initial(), traj.times())?;
    let d = decompose_path(&ckpt.system, &sol.y, &config, sol.converged)?;
    let grid = sol.y.grid();
    let nodes: Vec<usize> = u
        .iter()
        .map(|&v| (((v - grid.t0) / grid.step()).round().max(0.0) as usize).min(grid.size - 1))
        .collect();
    let mut d = d.select(&nodes);
    let span = ckpt.time_map.span();
    for t in &mut d.times {
        *t = ckpt.time_map.to_original(*t);
    }
    for m in [&mut d.markovian_rate, &mut d.nonmarkovian_rate, &mut d.total_rate] {
        for v in m.data_mut() {
            *v /= span;
        }
    }
    Ok(d)
}

/// Integrand embedding `F(y)` of observed states.
pub fn embed(ckpt: &Checkpoint, traj: &Trajectory) -> Result<Embedding> {
    check_dim(ckpt, traj)?;
    if ckpt.system.integral.is_none() {
        return Err(Error::invalid("model has no integral term to embed with"));
    }
    embed_states(&ckpt.system, traj.times(), traj.states())
}
