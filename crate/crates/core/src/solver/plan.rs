use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::system::IntervalSpec;
use super::{SolverConfig, Stepper};
use crate::ad::{PairContraction, SparseMatrix, Tensor};
use crate::error::Result;
use crate::numerics::{Interpolation, QuadratureRule, UniformGrid};

/// Where quadrature nodes are placed for the integral term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureLayout {
    /// One rule over each `[α(t), β(t)]`.
    #[default]
    Global,
    /// The rule applied on every stage-grid cell inside `[α(t), β(t)]`,
    /// so nodes are shared between stage times.
    PerStep,
}

/// Quadrature discretization of the integral term at every stage time.
#[derive(Debug, Clone)]
pub struct IntegralPlan {
    /// Distinct quadrature nodes `s`.
    pub nodes: Vec<f64>,
    /// Grid values to iterate values at `nodes`, `[nodes, grid]`.
    pub interp: Arc<SparseMatrix>,
    /// Rows `(t, s)` at which the kernel is evaluated, one per pair.
    pub kernel_inputs: Tensor,
    pub contraction: Arc<PairContraction>,
}

/// Time discretization shared by every pass of a solve.
#[derive(Debug, Clone)]
pub struct Plan {
    pub grid: UniformGrid,
    pub stepper: Stepper,
    /// Times at which the right-hand side is evaluated: grid nodes and, for
    /// RK4, the half-step midpoints (`2 * grid - 1` entries, nodes at even indices).
    pub stage_times: Vec<f64>,
    pub integral: Option<IntegralPlan>,
}

impl Plan {
    pub fn new(
        t0: f64,
        t1: f64,
        config: &SolverConfig,
        interval: Option<IntervalSpec>,
    ) -> Result<Self> {
        config.validate()?;
        let grid = UniformGrid::new(t0, t1, config.grid_size)?;
        let stage_times = match config.stepper {
            Stepper::Rk4 => UniformGrid::new(t0, t1, 2 * config.grid_size - 1)?.nodes(),
            Stepper::Euler => grid.nodes(),
        };
        let integral = match interval {
            None => None,
            Some(iv) => {
                iv.validate(t0, t1)?;
                Some(integral_plan(
                    &grid,
                    &stage_times,
                    iv,
                    &config.quadrature,
                    config.layout,
                    config.interpolation,
                )?)
            }
        };
        Ok(Plan {
            grid,
            stepper: config.stepper,
            stage_times,
            integral,
        })
    }

    /// Stage index of grid node `k`.
    pub fn node_stage(&self, k: usize) -> usize {
        match self.stepper {
            Stepper::Rk4 => 2 * k,
            Stepper::Euler => k,
        }
    }
}

fn key(a: f64, b: f64) -> (u64, u64) {
    (a.to_bits(), b.to_bits())
}

struct NodeTable {
    nodes: Vec<f64>,
    /// Per interval: `(node index, weight)` list.
    cache: HashMap<(u64, u64), Vec<(usize, f64)>>,
}

impl NodeTable {
    fn rule_on(&mut self, rule: &QuadratureRule, a: f64, b: f64) -> Result<&[(usize, f64)]> {
        if !self.cache.contains_key(&key(a, b)) {
            let (xs, ws) = rule.nodes_and_weights(a, b)?;
            let mut entries = Vec::with_capacity(xs.len());
            for (x, w) in xs.into_iter().zip(ws) {
                entries.push((self.nodes.len(), w));
                self.nodes.push(x);
            }
            self.cache.insert(key(a, b), entries);
        }
        Ok(&self.cache[&key(a, b)])
    }
}

/// Cells of `[a, b]` cut at the interior stage times.
fn cells(a: f64, b: f64, breaks: &[f64]) -> Vec<(f64, f64)> {
    let mut points = vec![a];
    points.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
    points.push(b);
    points.windows(2).map(|w| (w[0], w[1])).filter(|(x, y)| y > x).collect()
}

fn integral_plan(
    grid: &UniformGrid,
    stage_times: &[f64],
    interval: IntervalSpec,
    rule: &QuadratureRule,
    layout: QuadratureLayout,
    interpolation: Interpolation,
) -> Result<IntegralPlan> {
    let mut table = NodeTable {
        nodes: Vec::new(),
        cache: HashMap::new(),
    };
    let mut pairs = Vec::new();
    for (j, &t) in stage_times.iter().enumerate() {
        let (a, b) = interval.limits(t);
        let spans = match layout {
            QuadratureLayout::Global => vec![(a, b)],
            QuadratureLayout::PerStep => cells(a, b, stage_times),
        };
        for (lo, hi) in spans {
            for &(s, w) in table.rule_on(rule, lo, hi)? {
                pairs.push((j, s, w));
            }
        }
    }
    let nodes = table.nodes;
    let mut kernel_inputs = Vec::with_capacity(2 * pairs.len());
    for &(j, s, _) in &pairs {
        kernel_inputs.push(stage_times[j]);
        kernel_inputs.push(nodes[s]);
    }
    Ok(IntegralPlan {
        interp: Arc::new(grid.interpolation_matrix_with(&nodes, interpolation)),
        kernel_inputs: Tensor::matrix(pairs.len(), 2, kernel_inputs)?,
        contraction: Arc::new(PairContraction {
            targets: stage_times.len(),
            nodes: nodes.len(),
            n: 0,
            m: 0,
            pairs,
        }),
        nodes,
    })
}

impl IntegralPlan {
    /// The contraction with the system's `(n, m)` filled in.
    pub fn contraction_for(&self, n: usize, m: usize) -> Arc<PairContraction> {
        let mut c = (*self.contraction).clone();
        c.n = n;
        c.m = m;
        Arc::new(c)
    }
}
