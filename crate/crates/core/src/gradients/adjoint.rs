//! Backward adjoint sweep for `da/dt = −(∂f/∂y + K(t,t) F'(y(t)))ᵀ a`
//! with additive jumps at observation times.
//!
//! The Jacobians are evaluated once at every stage time on the stored
//! forward solution. The parameter integrand is linear in `a`, so the sweep
//! only accumulates per-stage cotangents, and a single batched VJP of the
//! right-hand side turns them into the parameter gradient.

use super::{Observations, Problem};
use crate::ad::{Eager, Graph, ParamVector, Tape, Tensor};
use crate::error::{Error, Result};
use crate::numerics::{Interpolation, UniformGrid};
use crate::solver::{
    integral_term, kernel_values, BatchSolution, IdeSystem, IntervalSpec, Plan, SolverConfig, Stepper,
};

/// `∂L/∂Y` on the grid, `[grid, batch * n]`: the observation jumps.
pub fn observation_cotangent(problem: &Problem, grid: &UniformGrid, n: usize, values: &Tensor) -> Result<Tensor> {
    let obs = Observations::new(problem, grid, n)?;
    let pred = obs.interp.apply(values)?;
    let mut d = pred.clone();
    for ((o, p), (t, w)) in d
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(obs.targets.data().iter().zip(obs.weights.data()))
    {
        *o = 2.0 * w * (p - t);
    }
    Ok(obs.interp.apply_transposed(&d))
}

/// Per-row Jacobians `∂out/∂y` of a row map, `[rows, q, n]` flattened,
/// computed with one VJP per output component.
fn row_jacobians(
    rows: &Tensor,
    q: usize,
    build: impl Fn(&mut Tape, &crate::ad::Var, &Tensor) -> Result<crate::ad::Var>,
) -> Result<Vec<f64>> {
    let (r, n) = (rows.rows(), rows.cols());
    let mut rep = Vec::with_capacity(r * q * n);
    for i in 0..r {
        for _ in 0..q {
            rep.extend_from_slice(rows.row_slice(i));
        }
    }
    let rep = Tensor::matrix(r * q, n, rep)?;
    let mut tape = Tape::new();
    let x = tape.leaf(rep.clone());
    let out = build(&mut tape, &x, &rep)?;
    let mut cot = vec![0.0; r * q * q];
    for i in 0..r {
        for k in 0..q {
            cot[(i * q + k) * q + k] = 1.0;
        }
    }
    let grads = tape.vjp(out, Tensor::matrix(r * q, q, cot)?)?;
    Ok(grads.get_or_zeros(x, rep.shape()).into_data())
}

fn diagonal_included(interval: IntervalSpec, t: f64) -> bool {
    let (a, b) = interval.limits(t);
    a <= t && t <= b
}

/// Combined state Jacobian `[stages * batch, n, n]` at the stage states.
fn state_jacobians(
    system: &IdeSystem,
    plan: &Plan,
    stage_states: &Tensor,
    batch: usize,
) -> Result<Vec<f64>> {
    let n = system.state_dim();
    let rows = stage_states.rows();
    let times: Vec<f64> = (0..rows).map(|r| plan.stage_times[r / batch]).collect();
    let mut jac = vec![0.0; rows * n * n];
    if system.dynamics.is_some() {
        let jf = row_jacobians(stage_states, n, |tape, x, _| {
            let bound = system.bind(tape, false);
            let t: Vec<f64> = times.iter().flat_map(|&t| std::iter::repeat_n(t, n)).collect();
            let tv = tape.constant(Tensor::column(&t));
            Ok(system.dynamics_forward(tape, &bound, &tv, x)?.expect("dynamics present"))
        })?;
        jac.copy_from_slice(&jf);
    }
    if let Some(interval) = system.interval() {
        let m = system.latent_dim();
        let mut g = Eager::new();
        let bound = system.bind(&mut g, false);
        let diag: Vec<f64> = plan.stage_times.iter().flat_map(|&t| [t, t]).collect();
        let kdiag = system.kernel_forward(&mut g, &bound, &Tensor::matrix(plan.stage_times.len(), 2, diag)?)?;
        let jfm = row_jacobians(stage_states, m, |tape, x, _| {
            let bound = system.bind(tape, false);
            system.integrand_forward(tape, &bound, x)
        })?;
        for r in 0..rows {
            let j = r / batch;
            if !diagonal_included(interval, plan.stage_times[j]) {
                continue;
            }
            let k = kdiag.row_slice(j);
            let jr = &jfm[r * m * n..(r + 1) * m * n];
            let out = &mut jac[r * n * n..(r + 1) * n * n];
            for i in 0..n {
                for kk in 0..m {
                    let kik = k[i * m + kk];
                    if kik == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        out[i * n + l] += kik * jr[kk * n + l];
                    }
                }
            }
        }
    }
    Ok(jac)
}

/// `Jᵀ a` for every trajectory at stage `j`.
fn transpose_apply(jac: &[f64], j: usize, batch: usize, n: usize, a: &[f64], out: &mut [f64]) {
    for b in 0..batch {
        let jr = &jac[(j * batch + b) * n * n..(j * batch + b + 1) * n * n];
        let ab = &a[b * n..(b + 1) * n];
        let ob = &mut out[b * n..(b + 1) * n];
        ob.fill(0.0);
        for i in 0..n {
            let ai = ab[i];
            if ai == 0.0 {
                continue;
            }
            for l in 0..n {
                ob[l] += jr[i * n + l] * ai;
            }
        }
    }
}

fn axpy(out: &mut [f64], base: &[f64], c: f64, x: &[f64]) {
    for ((o, b), v) in out.iter_mut().zip(base).zip(x) {
        *o = b + c * v;
    }
}

fn accumulate(row: &mut [f64], c: f64, x: &[f64]) {
    for (o, v) in row.iter_mut().zip(x) {
        *o += c * v;
    }
}

/// Parameter gradient by the continuous adjoint along a stored forward solution.
pub fn adjoint_from_solution(
    system: &IdeSystem,
    problem: &Problem,
    config: &SolverConfig,
    solution: &BatchSolution,
) -> Result<ParamVector> {
    let plan = Plan::new(problem.t0, problem.t1, config, system.interval())?;
    if solution.grid != plan.grid || solution.n != system.state_dim() || solution.batch() != problem.batch() {
        return Err(Error::invalid("forward solution does not match the problem"));
    }
    let n = system.state_dim();
    let batch = problem.batch();
    let width = batch * n;
    let grid = plan.grid;
    let h = grid.step();
    let stages = plan.stage_times.len();

    // The adjoint follows the continuous trajectory, so stage states between
    // nodes are read at fourth order rather than by the solver's own reading.
    let stage_interp = grid.interpolation_matrix_with(&plan.stage_times, Interpolation::Cubic);
    let stage_values = stage_interp.apply(&solution.values)?;
    let stage_states = stage_values.clone().reshaped(&[stages * batch, n])?;
    let jac = state_jacobians(system, &plan, &stage_states, batch)?;

    let jumps = observation_cotangent(problem, &grid, n, &solution.values)?;
    let mut cot = vec![0.0; stages * width];
    let mut a = jumps.row_slice(grid.size - 1).to_vec();
    let mut k1 = vec![0.0; width];
    let mut k2 = vec![0.0; width];
    let mut k3 = vec![0.0; width];
    let mut k4 = vec![0.0; width];
    let mut s2 = vec![0.0; width];
    let mut s3 = vec![0.0; width];
    let mut s4 = vec![0.0; width];
    for k in (0..grid.size - 1).rev() {
        match plan.stepper {
            Stepper::Rk4 => {
                let (j0, jm, j1) = (2 * k, 2 * k + 1, 2 * k + 2);
                transpose_apply(&jac, j1, batch, n, &a, &mut k1);
                axpy(&mut s2, &a, 0.5 * h, &k1);
                transpose_apply(&jac, jm, batch, n, &s2, &mut k2);
                axpy(&mut s3, &a, 0.5 * h, &k2);
                transpose_apply(&jac, jm, batch, n, &s3, &mut k3);
                axpy(&mut s4, &a, h, &k3);
                transpose_apply(&jac, j0, batch, n, &s4, &mut k4);
                accumulate(&mut cot[j1 * width..(j1 + 1) * width], h / 6.0, &a);
                accumulate(&mut cot[jm * width..(jm + 1) * width], h / 3.0, &s2);
                accumulate(&mut cot[jm * width..(jm + 1) * width], h / 3.0, &s3);
                accumulate(&mut cot[j0 * width..(j0 + 1) * width], h / 6.0, &s4);
                for i in 0..width {
                    a[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            Stepper::Euler => {
                transpose_apply(&jac, k + 1, batch, n, &a, &mut k1);
                accumulate(&mut cot[(k + 1) * width..(k + 2) * width], h, &a);
                for i in 0..width {
                    a[i] += h * k1[i];
                }
            }
        }
        accumulate(&mut a, 1.0, jumps.row_slice(k));
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("adjoint state at t = {}", grid.node(k))));
        }
    }

    if system.param_count() == 0 {
        return Ok(system.params());
    }
    let mut tape = Tape::new();
    let bound = system.bind(&mut tape, true);
    let mut total = None;
    if system.dynamics.is_some() {
        let times: Vec<f64> = (0..stages * batch).map(|r| plan.stage_times[r / batch]).collect();
        let tv = tape.constant(Tensor::column(&times));
        let yv = tape.constant(stage_states);
        let f = system.dynamics_forward(&mut tape, &bound, &tv, &yv)?.expect("dynamics present");
        total = Some(tape.reshape(&f, &[stages, width])?);
    }
    if let Some(kv) = kernel_values(&mut tape, system, &bound, &plan)? {
        let y = tape.constant(solution.values.clone());
        let i = integral_term(&mut tape, system, &bound, &plan, &kv, &y)?;
        total = Some(match total {
            Some(f) => tape.add(&f, &i)?,
            None => i,
        });
    }
    let Some(total) = total else {
        return Ok(system.params().zeros_like());
    };
    let c = tape.constant(Tensor::matrix(stages, width, cot)?);
    let weighted = tape.mul(&total, &c)?;
    let l = tape.sum(&weighted)?;
    let grads = tape.backward(l)?;
    Ok(system.collect_grad(&grads, &bound))
}
