//! Successive-approximation solver for
//! `dy/dt = f(t, y) + ∫_{α(t)}^{β(t)} K(t, s) F(y(s)) ds`.
//!
//! Each pass freezes the previous iterate inside the integral, so the pass
//! is an ordinary ODE solve. The integral term for every stage time is one
//! batched kernel/integrand contraction, and the solve is written against
//! [`Graph`] so the same code runs eagerly or on a gradient tape.

mod plan;
mod system;

pub use plan::{IntegralPlan, Plan, QuadratureLayout};
pub use system::{
    AnalyticKernel, AnalyticMap, BoundSystem, Dynamics, IdeSystem, Integrand, IntegralTerm,
    IntervalSpec, Kernel,
};

use serde::{Deserialize, Serialize};

use crate::ad::{Eager, Graph, Tensor};
use crate::error::{Error, Result};
use crate::numerics::{GridFunction, Interpolation, QuadratureRule, UniformGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grid_size: usize,
    pub max_iter: usize,
    /// Relative sup-norm change between iterates that counts as converged.
    pub tolerance: f64,
    pub stepper: Stepper,
    pub quadrature: QuadratureRule,
    pub layout: QuadratureLayout,
    pub interpolation: Interpolation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_size: 201,
            max_iter: 10,
            tolerance: 1e-6,
            stepper: Stepper::Rk4,
            quadrature: QuadratureRule::default(),
            layout: QuadratureLayout::Global,
            interpolation: Interpolation::Linear,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::invalid("grid_size must be at least 2"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        self.quadrature.validate()
    }
}

/// How many passes to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Passes {
    /// Until the tolerance is met or `max_iter` passes have run.
    Adaptive,
    /// Exactly this many passes (the discrete program differentiated by FD checks).
    Fixed(usize),
}

/// Single-trajectory solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub y: GridFunction,
    pub iterations_used: usize,
    /// Relative sup-norm change of the last pass.
    pub final_residual: f64,
    pub converged: bool,
}

/// Solutions for a batch of initial conditions sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSolution {
    pub grid: UniformGrid,
    /// `[grid, batch * n]`, trajectory `b` in columns `b*n .. (b+1)*n`.
    pub values: Tensor,
    pub n: usize,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl BatchSolution {
    pub fn batch(&self) -> usize {
        self.values.cols() / self.n
    }

    pub fn trajectory(&self, b: usize) -> GridFunction {
        let rows = self.grid.size;
        let cols = self.values.cols();
        let mut data = Vec::with_capacity(rows * self.n);
        for r in 0..rows {
            data.extend_from_slice(&self.values.data()[r * cols + b * self.n..r * cols + (b + 1) * self.n]);
        }
        GridFunction::new(self.grid, Tensor::matrix(rows, self.n, data).expect("shape"))
            .expect("grid function")
    }

    pub fn into_solutions(self) -> Vec<Solution> {
        (0..self.batch())
            .map(|b| Solution {
                y: self.trajectory(b),
                iterations_used: self.iterations_used,
                final_residual: self.final_residual,
                converged: self.converged,
            })
            .collect()
    }
}

/// Result of running the passes on a graph.
#[derive(Debug, Clone)]
pub struct PassOutput<V> {
    /// `[grid, batch * n]`.
    pub values: V,
    /// Integral term at every stage time from the last pass, `[stages, batch * n]`.
    pub integral: Option<V>,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub converged: bool,
}

/// Stack `[batch, n]` initial conditions into the solver layout.
pub fn stack_initial(y0s: &[Vec<f64>], n: usize) -> Result<Tensor> {
    if y0s.is_empty() {
        return Err(Error::invalid("no initial conditions"));
    }
    let mut data = Vec::with_capacity(y0s.len() * n);
    for (b, y) in y0s.iter().enumerate() {
        if y.len() != n {
            return Err(Error::invalid(format!(
                "initial condition {b} has dimension {}, expected {n}",
                y.len()
            )));
        }
        data.extend_from_slice(y);
    }
    Tensor::matrix(y0s.len(), n, data)
}

/// The integral term at every stage time for a frozen iterate `[grid, batch * n]`.
pub fn integral_term<G: Graph>(
    g: &mut G,
    system: &IdeSystem,
    bound: &BoundSystem<G::Value>,
    plan: &Plan,
    kernel: &G::Value,
    iterate: &G::Value,
) -> Result<G::Value> {
    let ip = plan.integral.as_ref().ok_or_else(|| Error::invalid("plan has no integral term"))?;
    let (n, m) = (system.state_dim(), system.latent_dim());
    let width = g.value(iterate).cols();
    let batch = width / n;
    let s = ip.nodes.len();
    let y_nodes = g.sparse_matmul(&ip.interp, iterate)?;
    let y_rows = g.reshape(&y_nodes, &[s * batch, n])?;
    let f_rows = system.integrand_forward(g, bound, &y_rows)?;
    let f_nodes = g.reshape(&f_rows, &[s, batch * m])?;
    g.pair_contract(&ip.contraction_for(n, m), kernel, &f_nodes)
}

/// Kernel values for the plan's pairs, evaluated once per solve.
pub fn kernel_values<G: Graph>(
    g: &mut G,
    system: &IdeSystem,
    bound: &BoundSystem<G::Value>,
    plan: &Plan,
) -> Result<Option<G::Value>> {
    match &plan.integral {
        None => Ok(None),
        Some(ip) => Ok(Some(system.kernel_forward(g, bound, &ip.kernel_inputs)?)),
    }
}

fn rhs<G: Graph>(
    g: &mut G,
    system: &IdeSystem,
    bound: &BoundSystem<G::Value>,
    t: f64,
    y: &G::Value,
    integral_row: Option<&G::Value>,
) -> Result<G::Value> {
    let batch = g.value(y).rows();
    let tv = g.constant(Tensor::filled(&[batch, 1], t));
    let local = system.dynamics_forward(g, bound, &tv, y)?;
    match (local, integral_row) {
        (Some(a), Some(b)) => g.add(&a, b),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b.clone()),
        (None, None) => {
            let shape = g.value(y).shape().to_vec();
            Ok(g.constant(Tensor::zeros(&shape)))
        }
    }
}

/// One ODE solve with the integral term given at every stage time.
pub fn ode_pass<G: Graph>(
    g: &mut G,
    system: &IdeSystem,
    bound: &BoundSystem<G::Value>,
    plan: &Plan,
    y0: &G::Value,
    integral: Option<&G::Value>,
    pass: usize,
) -> Result<G::Value> {
    let (batch, n) = (g.value(y0).rows(), g.value(y0).cols());
    let width = batch * n;
    let rows: Vec<Option<G::Value>> = match integral {
        None => vec![None; plan.stage_times.len()],
        Some(iv) => {
            let mut out = Vec::with_capacity(plan.stage_times.len());
            for j in 0..plan.stage_times.len() {
                let r = g.slice(iv, 0, j, j + 1)?;
                out.push(Some(g.reshape(&r, &[batch, n])?));
            }
            out
        }
    };
    let grid = plan.grid;
    let h = grid.step();
    let mut y = y0.clone();
    let mut states = Vec::with_capacity(grid.size);
    states.push(g.reshape(&y, &[1, width])?);
    for k in 0..grid.size - 1 {
        let t = grid.node(k);
        y = match plan.stepper {
            Stepper::Euler => {
                let d = rhs(g, system, bound, t, &y, rows[k].as_ref())?;
                g.weighted_sum(&[1.0, h], &[&y, &d])?
            }
            Stepper::Rk4 => {
                let (j0, jm, j1) = (2 * k, 2 * k + 1, 2 * k + 2);
                let tm = plan.stage_times[jm];
                let t1 = grid.node(k + 1);
                let k1 = rhs(g, system, bound, t, &y, rows[j0].as_ref())?;
                let y2 = g.weighted_sum(&[1.0, 0.5 * h], &[&y, &k1])?;
                let k2 = rhs(g, system, bound, tm, &y2, rows[jm].as_ref())?;
                let y3 = g.weighted_sum(&[1.0, 0.5 * h], &[&y, &k2])?;
                let k3 = rhs(g, system, bound, tm, &y3, rows[jm].as_ref())?;
                let y4 = g.weighted_sum(&[1.0, h], &[&y, &k3])?;
                let k4 = rhs(g, system, bound, t1, &y4, rows[j1].as_ref())?;
                g.weighted_sum(
                    &[1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0],
                    &[&y, &k1, &k2, &k3, &k4],
                )?
            }
        };
        if !g.value(&y).is_finite() {
            return Err(Error::Solver {
                iterate: pass,
                time: grid.node(k + 1),
                reason: "non-finite state".into(),
            });
        }
        states.push(g.reshape(&y, &[1, width])?);
    }
    let refs: Vec<&G::Value> = states.iter().collect();
    g.concat(&refs, 0)
}

/// Largest per-trajectory relative sup-norm change, denominator `max(sup|old|, 1)`.
pub fn relative_change(old: &Tensor, new: &Tensor, n: usize) -> f64 {
    let cols = old.cols();
    let batch = cols / n;
    let mut worst = 0.0_f64;
    for b in 0..batch {
        let mut diff = 0.0_f64;
        let mut sup = 0.0_f64;
        for r in 0..old.rows() {
            for c in b * n..(b + 1) * n {
                let (o, v) = (old.get(r, c), new.get(r, c));
                diff = diff.max((v - o).abs());
                sup = sup.max(o.abs());
            }
        }
        worst = worst.max(diff / sup.max(1.0));
    }
    worst
}

/// Constant iterate `y(t) ≡ y0` in the solver layout.
pub fn constant_iterate<G: Graph>(g: &mut G, y0: &G::Value, grid_size: usize) -> Result<G::Value> {
    let width = g.value(y0).numel();
    let row = g.reshape(y0, &[1, width])?;
    let refs = vec![&row; grid_size];
    g.concat(&refs, 0)
}

/// Run successive approximation from the constant initial guess.
pub fn run_passes<G: Graph>(
    g: &mut G,
    system: &IdeSystem,
    bound: &BoundSystem<G::Value>,
    plan: &Plan,
    y0: &G::Value,
    config: &SolverConfig,
    passes: Passes,
) -> Result<PassOutput<G::Value>> {
    let n = system.state_dim();
    if g.value(y0).rank() != 2 || g.value(y0).cols() != n {
        return Err(Error::invalid(format!(
            "initial conditions {:?}, expected [batch, {n}]",
            g.value(y0).shape()
        )));
    }
    let kernel = kernel_values(g, system, bound, plan)?;
    let mut current = constant_iterate(g, y0, plan.grid.size)?;
    let limit = match passes {
        Passes::Adaptive => config.max_iter,
        Passes::Fixed(k) => k.max(1),
    };
    let mut last_integral = None;
    let mut change = f64::INFINITY;
    let mut used = 0;
    let mut converged = false;
    for pass in 0..limit {
        let integral = match &kernel {
            Some(k) => Some(integral_term(g, system, bound, plan, k, &current)?),
            None => None,
        };
        let next = ode_pass(g, system, bound, plan, y0, integral.as_ref(), pass + 1)?;
        change = relative_change(g.value(&current), g.value(&next), n);
        current = next;
        last_integral = integral;
        used = pass + 1;
        if kernel.is_none() {
            converged = true;
            change = 0.0;
            break;
        }
        if change <= config.tolerance {
            converged = true;
            if passes == Passes::Adaptive {
                break;
            }
        } else {
            converged = false;
        }
    }
    Ok(PassOutput {
        values: current,
        integral: last_integral,
        iterations_used: used,
        final_residual: change,
        converged,
    })
}

/// Solve a batch of initial-value problems on a shared window.
pub fn solve_batch(
    system: &IdeSystem,
    y0s: &[Vec<f64>],
    t0: f64,
    t1: f64,
    config: &SolverConfig,
) -> Result<BatchSolution> {
    let plan = Plan::new(t0, t1, config, system.interval())?;
    solve_with_plan(system, y0s, &plan, config, Passes::Adaptive)
}

pub fn solve_with_plan(
    system: &IdeSystem,
    y0s: &[Vec<f64>],
    plan: &Plan,
    config: &SolverConfig,
    passes: Passes,
) -> Result<BatchSolution> {
    let n = system.state_dim();
    let mut g = Eager::new();
    let bound = system.bind(&mut g, false);
    let y0 = stack_initial(y0s, n)?;
    let out = run_passes(&mut g, system, &bound, plan, &y0, config, passes)?;
    Ok(BatchSolution {
        grid: plan.grid,
        values: out.values,
        n,
        iterations_used: out.iterations_used,
        final_residual: out.final_residual,
        converged: out.converged,
    })
}

pub fn solve_ivp(system: &IdeSystem, y0: &[f64], t0: f64, t1: f64, config: &SolverConfig) -> Result<Solution> {
    if !(t0 < t1) {
        return Err(Error::invalid(format!("need t0 < t1, got [{t0}, {t1}]")));
    }
    let batch = solve_batch(system, &[y0.to_vec()], t0, t1, config)?;
    Ok(batch.into_solutions().remove(0))
}

fn check_grid(system: &IdeSystem, traj: &GridFunction) -> Result<()> {
    if traj.dim() != system.state_dim() {
        return Err(Error::invalid(format!(
            "trajectory has dimension {}, system {}",
            traj.dim(),
            system.state_dim()
        )));
    }
    Ok(())
}

/// One pass with the integral term computed from `current`; the grid is
/// taken from `current`.
pub fn iterate_once(system: &IdeSystem, current: &GridFunction, y0: &[f64], config: &SolverConfig) -> Result<GridFunction> {
    check_grid(system, current)?;
    let grid = *current.grid();
    let config = SolverConfig {
        grid_size: grid.size,
        ..config.clone()
    };
    let plan = Plan::new(grid.t0, grid.t1, &config, system.interval())?;
    let mut g = Eager::new();
    let bound = system.bind(&mut g, false);
    let y0 = stack_initial(&[y0.to_vec()], system.state_dim())?;
    let integral = match kernel_values(&mut g, system, &bound, &plan)? {
        Some(k) => Some(integral_term(&mut g, system, &bound, &plan, &k, current.values())?),
        None => None,
    };
    let values = ode_pass(&mut g, system, &bound, &plan, &y0, integral.as_ref(), 1)?;
    GridFunction::new(grid, values)
}

/// `f(t_k, y_k)` and the integral term at every node of `traj`, each
/// `[grid, n]`; the integral is `None` when `K ≡ 0`.
pub fn rates_at_nodes(
    system: &IdeSystem,
    traj: &GridFunction,
    config: &SolverConfig,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    check_grid(system, traj)?;
    let grid = *traj.grid();
    let config = SolverConfig {
        grid_size: grid.size,
        stepper: Stepper::Euler,
        ..config.clone()
    };
    let plan = Plan::new(grid.t0, grid.t1, &config, system.interval())?;
    let mut g = Eager::new();
    let bound = system.bind(&mut g, false);
    let times = Tensor::column(&grid.nodes());
    let local = system.dynamics_forward(&mut g, &bound, &times, traj.values())?;
    let integral = match kernel_values(&mut g, system, &bound, &plan)? {
        Some(k) => Some(integral_term(&mut g, system, &bound, &plan, &k, traj.values())?),
        None => None,
    };
    Ok((local, integral))
}

/// Per-node `max_i |dy_i/dt − f_i − integral_i|` with central differences
/// inside and one-sided differences at the ends.
pub fn residual_profile(system: &IdeSystem, traj: &GridFunction, config: &SolverConfig) -> Result<Vec<f64>> {
    let (local, integral) = rates_at_nodes(system, traj, config)?;
    let grid = *traj.grid();
    let (g, n) = (grid.size, traj.dim());
    let h = grid.step();
    let y = traj.values();
    let mut out = vec![0.0; g];
    for (k, slot) in out.iter_mut().enumerate() {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(g - 1));
        let span = (hi - lo) as f64 * h;
        let mut worst = 0.0_f64;
        for i in 0..n {
            let dy = (y.get(hi, i) - y.get(lo, i)) / span;
            let mut rate = 0.0;
            if let Some(l) = &local {
                rate += l.get(k, i);
            }
            if let Some(v) = &integral {
                rate += v.get(k, i);
            }
            worst = worst.max((dy - rate).abs());
        }
        *slot = worst;
    }
    Ok(out)
}

/// Max over interior grid nodes of the central-difference residual.
pub fn residual(system: &IdeSystem, traj: &GridFunction, config: &SolverConfig) -> Result<f64> {
    let p = residual_profile(system, traj, config)?;
    Ok(p[1..p.len() - 1].iter().copied().fold(0.0, f64::max))
}
