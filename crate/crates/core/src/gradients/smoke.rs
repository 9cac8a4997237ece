//! Small fixed systems on which the three gradient modes are cross-checked.

use super::{adjoint, compare, finite_difference, scale_kernel, unrolled, GradientReport, LossSpec, Problem, ReportRow};
use crate::datasets::Trajectory;
use crate::error::Result;
use crate::nets::{DynamicsNet, IntegrandNet, KernelNet, Mlp};
use crate::rng::Stream;
use crate::solver::{Dynamics, IdeSystem, Integrand, IntegralTerm, IntervalSpec, Kernel, Passes, SolverConfig};

pub const FD_STEP: f64 = 1e-5;
pub const UNROLLED_TOLERANCE: f64 = 1e-4;
pub const ADJOINT_TOLERANCE: f64 = 1e-4;
pub const SMALL_KERNEL_COSINE: f64 = 0.99;
/// Largest kernel entry in the small-kernel case.
pub const SMALL_KERNEL_SUP: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct SmokeCase {
    pub name: String,
    pub system: IdeSystem,
    pub problem: Problem,
    pub config: SolverConfig,
}

impl SmokeCase {
    pub fn has_kernel(&self) -> bool {
        self.system.integral.is_some()
    }
}

pub fn smoke_config() -> SolverConfig {
    SolverConfig {
        grid_size: 41,
        ..SolverConfig::default()
    }
}

/// Net-parameterized system; `interval: None` drops the integral term.
pub fn net_system(n: usize, m: usize, hidden: usize, interval: Option<IntervalSpec>, seed: u64) -> Result<IdeSystem> {
    let f = DynamicsNet::new(Mlp::init(DynamicsNet::spec_for(n, &[hidden]), seed)?)?;
    let integral = match interval {
        None => None,
        Some(interval) => Some(IntegralTerm {
            kernel: Kernel::Net(KernelNet::new(Mlp::init(KernelNet::spec_for(n, m, &[hidden]), seed + 1)?, n, m)?),
            integrand: Integrand::Net(IntegrandNet::new(Mlp::init(
                IntegrandNet::spec_for(n, m, &[hidden]),
                seed + 2,
            )?)?),
            interval,
        }),
    };
    IdeSystem::new(n, m, Some(Dynamics::Net(f)), integral)
}

/// Random smooth targets at `points` evenly spaced times on `[0, 1]`.
pub fn random_problem(n: usize, batch: usize, points: usize, seed: u64) -> Result<Problem> {
    let mut rng = Stream::new(seed, &["smoke", "targets"]);
    let times: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let mut specs = Vec::new();
    let mut y0s = Vec::new();
    for _ in 0..batch {
        let phase: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 6.0)).collect();
        let amp: Vec<f64> = (0..n).map(|_| rng.uniform(0.3, 1.0)).collect();
        let rows: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| (0..n).map(|i| amp[i] * (2.0 * t + phase[i]).sin()).collect())
            .collect();
        y0s.push(rows[0].clone());
        specs.push(LossSpec::full(Trajectory::from_rows(times.clone(), &rows)?));
    }
    Problem::new(0.0, 1.0, y0s, specs)
}

/// The default suite: pure ODE, Volterra, Fredholm and a rectangular kernel,
/// each with at most 100 parameters and `n <= 4`.
pub fn smoke_cases() -> Result<Vec<SmokeCase>> {
    let config = smoke_config();
    let volterra = IntervalSpec::Volterra { a: 0.0 };
    let cases = vec![
        ("node_n2", net_system(2, 2, 6, None, 11)?, random_problem(2, 2, 6, 1)?),
        ("volterra_n2", net_system(2, 2, 4, Some(volterra), 21)?, random_problem(2, 1, 6, 2)?),
        (
            "fredholm_n2",
            net_system(2, 2, 4, Some(IntervalSpec::Fredholm { a: 0.0, b: 1.0 }), 31)?,
            random_problem(2, 1, 5, 3)?,
        ),
        ("volterra_n3_m2", net_system(3, 2, 3, Some(volterra), 41)?, random_problem(3, 2, 5, 4)?),
    ];
    Ok(cases
        .into_iter()
        .map(|(name, system, problem)| SmokeCase {
            name: name.into(),
            system,
            problem,
            config: config.clone(),
        })
        .collect())
}

/// The Volterra case with its kernel output layer shrunk until
/// `|K_ij| <= SMALL_KERNEL_SUP`.
pub fn small_kernel_case() -> Result<SmokeCase> {
    let system = net_system(2, 2, 4, Some(IntervalSpec::Volterra { a: 0.0 }), 21)?;
    let mut sup = 0.0f64;
    for i in 0..=10 {
        for j in 0..=i {
            sup = sup.max(system.kernel_matrix(i as f64 / 10.0, j as f64 / 10.0)?.max_abs());
        }
    }
    let scale = if sup > 0.0 { 0.5 * SMALL_KERNEL_SUP / sup } else { 1.0 };
    Ok(SmokeCase {
        name: "volterra_small_kernel".into(),
        system: scale_kernel(&system, scale)?,
        problem: random_problem(2, 1, 6, 2)?,
        config: smoke_config(),
    })
}

/// Unrolled vs finite differences on every case, adjoint vs unrolled with
/// a bound where one is claimed: relative error when `K ≡ 0`, cosine for
/// the small-kernel case. Other adjoint rows are informational.
pub fn run_gradcheck(cases: &[SmokeCase], small_kernel: Option<&SmokeCase>) -> Result<GradientReport> {
    let mut report = GradientReport::default();
    let mut push = |case: &SmokeCase, small: bool| -> Result<()> {
        let exact = unrolled(&case.system, &case.problem, &case.config, Passes::Adaptive)?;
        let fd = finite_difference(&case.system, &case.problem, &case.config, FD_STEP)?;
        let adj = adjoint(&case.system, &case.problem, &case.config)?;
        report.rows.push(ReportRow {
            system: case.name.clone(),
            mode: "unrolled".into(),
            reference: "fd".into(),
            loss: exact.loss,
            grad_norm: exact.grad.norm(),
            comparison: compare(&exact.grad, &fd.grad),
            tolerance: Some(UNROLLED_TOLERANCE),
            min_cosine: None,
        });
        report.rows.push(ReportRow {
            system: case.name.clone(),
            mode: "adjoint".into(),
            reference: "unrolled".into(),
            loss: adj.loss,
            grad_norm: adj.grad.norm(),
            comparison: compare(&adj.grad, &exact.grad),
            tolerance: (!case.has_kernel()).then_some(ADJOINT_TOLERANCE),
            min_cosine: small.then_some(SMALL_KERNEL_COSINE),
        });
        report.rows.push(ReportRow {
            system: case.name.clone(),
            mode: "adjoint".into(),
            reference: "fd".into(),
            loss: adj.loss,
            grad_norm: adj.grad.norm(),
            comparison: compare(&adj.grad, &fd.grad),
            tolerance: None,
            min_cosine: None,
        });
        Ok(())
    };
    for case in cases {
        push(case, false)?;
    }
    if let Some(case) = small_kernel {
        push(case, true)?;
    }
    Ok(report)
}
