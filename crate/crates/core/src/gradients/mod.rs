//! Loss and parameter gradients: exact reverse mode through the discrete
//! solver, the continuous adjoint, and a central-difference oracle.

mod adjoint;
mod report;
pub mod smoke;

pub use adjoint::{adjoint_from_solution, observation_cotangent};
pub use report::{compare, kernel_scale_sweep, render_sweep, scale_kernel, Comparison, GradientReport, ReportRow, SweepRow};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::{Eager, Graph, ParamVector, SparseMatrix, Tape, Tensor};
use crate::datasets::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::{GridFunction, UniformGrid};
use crate::solver::{run_passes, stack_initial, BatchSolution, IdeSystem, Passes, Plan, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
}

/// Observed trajectory with a per-time mask; `true` marks a point that enters the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub observed: Trajectory,
    pub mask: Vec<bool>,
}

impl LossSpec {
    pub fn new(observed: Trajectory, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != observed.len() {
            return Err(Error::invalid(format!(
                "mask has {} entries for {} observations",
                mask.len(),
                observed.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("every observation is masked"));
        }
        Ok(LossSpec {
            kind: LossKind::Mse,
            observed,
            mask,
        })
    }

    pub fn full(observed: Trajectory) -> Self {
        let mask = vec![true; observed.len()];
        LossSpec {
            kind: LossKind::Mse,
            observed,
            mask,
        }
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    Unrolled,
    Adjoint,
    FiniteDifference { step: f64 },
}


/// MSE over unmasked points and dimensions of the interpolated solution.
pub fn loss(solution: &GridFunction, spec: &LossSpec) -> Result<f64> {
    if solution.dim() != spec.observed.dim() {
        return Err(Error::invalid("solution and observations differ in dimension"));
    }
    if spec.active() == 0 {
        return Err(Error::invalid("every observation is masked"));
    }
    let n = solution.dim();
    let mut sse = 0.0;
    let mut pred = vec![0.0; n];
    for (i, &t) in spec.observed.times().iter().enumerate() {
        if !spec.mask[i] {
            continue;
        }
        solution.eval_into(t, &mut pred);
        for (p, o) in pred.iter().zip(spec.observed.states().row_slice(i)) {
            sse += (p - o) * (p - o);
        }
    }
    Ok(sse / (spec.active() * n) as f64)
}

/// A batch of initial-value problems with observations on shared times.
///
/// The batch loss is the mean over trajectories of each trajectory's MSE.
#[derive(Debug, Clone)]
pub struct Problem {
    pub t0: f64,
    pub t1: f64,
    pub y0s: Vec<Vec<f64>>,
    pub specs: Vec<LossSpec>,
}

impl Problem {
    /// Window and initial conditions taken from the observations.
    pub fn from_specs(specs: Vec<LossSpec>) -> Result<Self> {
        let first = specs.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (t0, t1) = (first.observed.t0(), first.observed.t1());
        let y0s = specs.iter().map(|s| s.observed.initial().to_vec()).collect();
        Problem::new(t0, t1, y0s, specs)
    }

    pub fn new(t0: f64, t1: f64, y0s: Vec<Vec<f64>>, specs: Vec<LossSpec>) -> Result<Self> {
        if specs.is_empty() || specs.len() != y0s.len() {
            return Err(Error::invalid("batch needs one initial condition per observation set"));
        }
        let times = specs[0].observed.times();
        for s in &specs {
            if s.observed.times() != times {
                return Err(Error::invalid("observation times differ within a batch"));
            }
            if s.active() == 0 {
                return Err(Error::invalid("every observation is masked"));
            }
        }
        if times[0] < t0 || times[times.len() - 1] > t1 {
            return Err(Error::invalid("observations fall outside the solve window"));
        }
        Ok(Problem { t0, t1, y0s, specs })
    }

    pub fn batch(&self) -> usize {
        self.specs.len()
    }

    pub fn single(y0: &[f64], spec: &LossSpec) -> Result<Self> {
        Problem::new(spec.observed.t0(), spec.observed.t1(), vec![y0.to_vec()], vec![spec.clone()])
    }
}

/// Observation map onto the solver grid with targets and loss weights.
#[derive(Debug, Clone)]
pub struct Observations {
    /// `[observations, grid]`.
    pub interp: Arc<SparseMatrix>,
    /// `[observations, batch * n]`, masked entries zeroed.
    pub targets: Tensor,
    /// `[observations, batch * n]`, `1 / (batch * active_b * n)` or 0 when masked.
    pub weights: Tensor,
}

impl Observations {
    pub fn new(problem: &Problem, grid: &UniformGrid, n: usize) -> Result<Self> {
        let times = problem.specs[0].observed.times();
        let batch = problem.batch();
        let rows = times.len();
        let width = batch * n;
        let mut targets = vec![0.0; rows * width];
        let mut weights = vec![0.0; rows * width];
        for (b, spec) in problem.specs.iter().enumerate() {
            if spec.observed.dim() != n {
                return Err(Error::invalid(format!(
                    "observations have dimension {}, system {n}",
                    spec.observed.dim()
                )));
            }
            let w = 1.0 / (batch * spec.active() * n) as f64;
            for r in 0..rows {
                if !spec.mask[r] {
                    continue;
                }
                for i in 0..n {
                    targets[r * width + b * n + i] = spec.observed.states().get(r, i);
                    weights[r * width + b * n + i] = w;
                }
            }
        }
        Ok(Observations {
            interp: Arc::new(grid.interpolation_matrix(times)),
            targets: Tensor::matrix(rows, width, targets)?,
            weights: Tensor::matrix(rows, width, weights)?,
        })
    }

    pub fn loss_on<G: Graph>(&self, g: &mut G, values: &G::Value) -> Result<G::Value> {
        let pred = g.sparse_matmul(&self.interp, values)?;
        let target = g.constant(self.targets.clone());
        let diff = g.sub(&pred, &target)?;
        let sq = g.mul(&diff, &diff)?;
        let w = g.constant(self.weights.clone());
        let weighted = g.mul(&sq, &w)?;
        g.sum(&weighted)
    }
}

/// Loss and parameter gradient for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub loss: f64,
    pub grad: ParamVector,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Forward solve and batch loss.
pub fn batch_loss(
    system: &IdeSystem,
    problem: &Problem,
    config: &SolverConfig,
    passes: Passes,
) -> Result<(f64, BatchSolution)> {
    let plan = Plan::new(problem.t0, problem.t1, config, system.interval())?;
    let obs = Observations::new(problem, &plan.grid, system.state_dim())?;
    let mut g = Eager::new();
    let bound = system.bind(&mut g, false);
    let y0 = stack_initial(&problem.y0s, system.state_dim())?;
    let out = run_passes(&mut g, system, &bound, &plan, &y0, config, passes)?;
    let l = obs.loss_on(&mut g, &out.values)?.item();
    let sol = BatchSolution {
        grid: plan.grid,
        values: out.values,
        n: system.state_dim(),
        iterations_used: out.iterations_used,
        final_residual: out.final_residual,
        converged: out.converged,
    };
    Ok((l, sol))
}

/// Exact reverse-mode gradient of the discrete solver program.
pub fn unrolled(system: &IdeSystem, problem: &Problem, config: &SolverConfig, passes: Passes) -> Result<GradientResult> {
    let plan = Plan::new(problem.t0, problem.t1, config, system.interval())?;
    let obs = Observations::new(problem, &plan.grid, system.state_dim())?;
    let mut tape = Tape::new();
    let bound = system.bind(&mut tape, true);
    let y0 = tape.constant(stack_initial(&problem.y0s, system.state_dim())?);
    let out = run_passes(&mut tape, system, &bound, &plan, &y0, config, passes)?;
    let l = obs.loss_on(&mut tape, &out.values)?;
    let value = tape.value(&l).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(l)?;
    Ok(GradientResult {
        loss: value,
        grad: system.collect_grad(&grads, &bound),
        iterations_used: out.iterations_used,
        converged: out.converged,
    })
}

/// Central differences of the batch loss with the pass count of the
/// unperturbed solve held fixed.
pub fn finite_difference(system: &IdeSystem, problem: &Problem, config: &SolverConfig, step: f64) -> Result<GradientResult> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (base, sol) = batch_loss(system, problem, config, Passes::Adaptive)?;
    let passes = Passes::Fixed(sol.iterations_used);
    let theta = system.params();
    let mut grad = theta.zeros_like();
    let mut probe = system.clone();
    for i in 0..theta.len() {
        let mut v = theta.values().to_vec();
        v[i] = theta.values()[i] + step;
        probe.set_params(&v)?;
        let plus = batch_loss(&probe, problem, config, passes)?.0;
        v[i] = theta.values()[i] - step;
        probe.set_params(&v)?;
        let minus = batch_loss(&probe, problem, config, passes)?.0;
        grad.values_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(GradientResult {
        loss: base,
        grad,
        iterations_used: sol.iterations_used,
        converged: sol.converged,
    })
}

/// Continuous adjoint integrated backward along the stored forward solution.
pub fn adjoint(system: &IdeSystem, problem: &Problem, config: &SolverConfig) -> Result<GradientResult> {
    let (l, sol) = batch_loss(system, problem, config, Passes::Adaptive)?;
    let grad = adjoint_from_solution(system, problem, config, &sol)?;
    Ok(GradientResult {
        loss: l,
        grad,
        iterations_used: sol.iterations_used,
        converged: sol.converged,
    })
}

pub fn gradient(system: &IdeSystem, problem: &Problem, config: &SolverConfig, mode: GradMode) -> Result<GradientResult> {
    match mode {
        GradMode::Unrolled => unrolled(system, problem, config, Passes::Adaptive),
        GradMode::Adjoint => adjoint(system, problem, config),
        GradMode::FiniteDifference { step } => finite_difference(system, problem, config, step),
    }
}

pub fn grad_unrolled(system: &IdeSystem, y0: &[f64], spec: &LossSpec, config: &SolverConfig) -> Result<(f64, ParamVector)> {
    let r = unrolled(system, &Problem::single(y0, spec)?, config, Passes::Adaptive)?;
    Ok((r.loss, r.grad))
}

pub fn grad_adjoint(system: &IdeSystem, y0: &[f64], spec: &LossSpec, config: &SolverConfig) -> Result<(f64, ParamVector)> {
    let r = adjoint(system, &Problem::single(y0, spec)?, config)?;
    Ok((r.loss, r.grad))
}

pub fn grad_fd(system: &IdeSystem, y0: &[f64], spec: &LossSpec, config: &SolverConfig, step: f64) -> Result<ParamVector> {
    Ok(finite_difference(system, &Problem::single(y0, spec)?, config, step)?.grad)
}

#[cfg(test)]
mod tests;
