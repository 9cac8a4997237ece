use super::smoke::*;
use super::*;
use crate::nets::{DynamicsNet, Mlp};
use crate::solver::{Dynamics, IntervalSpec};

/// `dy/dt = λ y` as an affine dynamics net with weight `[λ, 0]`.
fn linear_decay(lambda: f64) -> IdeSystem {
    let mlp = Mlp::from_params(DynamicsNet::spec_for(1, &[]), vec![lambda, 0.0, 0.0]).unwrap();
    IdeSystem::new(1, 0, Some(Dynamics::Net(DynamicsNet::new(mlp).unwrap())), None).unwrap()
}

/// Loss `y(1)^2` through a masked first sample.
fn terminal_problem() -> Problem {
    let obs = Trajectory::from_rows(vec![0.0, 1.0], &[vec![1.0], vec![0.0]]).unwrap();
    let spec = LossSpec::new(obs, vec![false, true]).unwrap();
    Problem::new(0.0, 1.0, vec![vec![1.0]], vec![spec]).unwrap()
}

#[test]
fn loss_examples() {
    let grid = UniformGrid::new(0.0, 1.0, 3).unwrap();
    let gf = GridFunction::new(grid, Tensor::column(&[1.0, 1.0, 1.0])).unwrap();
    let same = LossSpec::full(Trajectory::from_rows(vec![0.0, 1.0], &[vec![1.0], vec![1.0]]).unwrap());
    assert_eq!(loss(&gf, &same).unwrap(), 0.0);
    let off = Trajectory::from_rows(vec![0.0, 1.0], &[vec![3.0], vec![3.0]]).unwrap();
    let single = LossSpec::new(off.clone(), vec![true, false]).unwrap();
    assert_eq!(loss(&gf, &single).unwrap(), 4.0);
    assert_eq!(loss(&gf, &LossSpec::full(off)).unwrap(), 4.0);
    assert!(LossSpec::new(same.observed.clone(), vec![false, false]).is_err());
}

#[test]
fn linear_decay_gradient_is_analytic() {
    let lambda = -0.7_f64;
    let r = unrolled(&linear_decay(lambda), &terminal_problem(), &SolverConfig::default(), Passes::Adaptive).unwrap();
    let expected = 2.0 * (2.0 * lambda).exp();
    let got = r.grad.values()[0];
    assert!(((got - expected) / expected).abs() <= 1e-4, "{got} vs {expected}");
    assert!((r.loss - (2.0 * lambda).exp()).abs() <= 1e-8);
    let adj = adjoint(&linear_decay(lambda), &terminal_problem(), &SolverConfig::default()).unwrap();
    assert!(((adj.grad.values()[0] - expected) / expected).abs() <= 1e-4);
}

/// Observations read off the system's own solution at grid nodes.
fn self_consistent(case: &SmokeCase) -> Problem {
    let (_, sol) = batch_loss(&case.system, &case.problem, &case.config, Passes::Adaptive).unwrap();
    let idx = [0, 10, 20, 30, 40];
    let specs = (0..case.problem.batch())
        .map(|b| {
            let gf = sol.trajectory(b);
            let times: Vec<f64> = idx.iter().map(|&k| gf.grid().node(k)).collect();
            let rows: Vec<Vec<f64>> = idx.iter().map(|&k| gf.values().row_slice(k).to_vec()).collect();
            LossSpec::full(Trajectory::from_rows(times, &rows).unwrap())
        })
        .collect();
    Problem::new(0.0, 1.0, case.problem.y0s.clone(), specs).unwrap()
}

#[test]
fn zero_loss_gives_zero_gradient() {
    for case in smoke_cases().unwrap().into_iter().take(2) {
        let problem = self_consistent(&case);
        let r = unrolled(&case.system, &problem, &case.config, Passes::Adaptive).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.values().iter().all(|&g| g == 0.0), "{}", case.name);
        let a = adjoint(&case.system, &problem, &case.config).unwrap();
        assert!(a.grad.values().iter().all(|&g| g == 0.0), "{}", case.name);
    }
}

#[test]
fn constant_landscape_has_zero_fd_gradient() {
    let mut sys = net_system(2, 2, 3, Some(IntervalSpec::Volterra { a: 0.0 }), 5).unwrap();
    let zeros = vec![0.0; sys.param_count()];
    sys.set_params(&zeros).unwrap();
    let obs = Trajectory::from_rows(vec![0.0, 0.5, 1.0], &vec![vec![0.2, -0.1]; 3]).unwrap();
    let problem = Problem::from_specs(vec![LossSpec::full(obs)]).unwrap();
    let g = finite_difference(&sys, &problem, &smoke_config(), 1e-4).unwrap();
    assert!(g.grad.values().iter().all(|v| v.abs() <= 1e-8), "{:?}", g.grad.values());
}

#[test]
fn suite_meets_tolerances() {
    let cases = smoke_cases().unwrap();
    for case in &cases {
        assert!(case.system.param_count() <= 100 && case.system.state_dim() <= 4);
    }
    let small = small_kernel_case().unwrap();
    let report = run_gradcheck(&cases, Some(&small)).unwrap();
    assert!(report.passed(), "\n{}", report.render());
}

#[test]
fn adjoint_jumps_total_the_loss_derivative() {
    let case = &smoke_cases().unwrap()[1];
    let (_, sol) = batch_loss(&case.system, &case.problem, &case.config, Passes::Adaptive).unwrap();
    let n = case.system.state_dim();
    let jumps = observation_cotangent(&case.problem, &sol.grid, n, &sol.values).unwrap();
    let gf = sol.trajectory(0);
    let spec = &case.problem.specs[0];
    for i in 0..n {
        let total: f64 = (0..sol.grid.size).map(|k| jumps.get(k, i)).sum();
        // The loss is quadratic in a uniform shift, so central differences are exact.
        let shifted = |eps: f64| {
            let mut v = gf.values().clone();
            for k in 0..sol.grid.size {
                v.data_mut()[k * n + i] += eps;
            }
            loss(&GridFunction::new(sol.grid, v).unwrap(), spec).unwrap()
        };
        let direct = (shifted(1e-3) - shifted(-1e-3)) / 2e-3;
        assert!((total - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{total} vs {direct}");
    }
}

#[test]
fn masked_observations_do_not_touch_gradients() {
    let case = &smoke_cases().unwrap()[1];
    let obs = case.problem.specs[0].observed.clone();
    let mask: Vec<bool> = (0..obs.len()).map(|i| i < 4).collect();
    let with = |obs: Trajectory| {
        let spec = LossSpec::new(obs, mask.clone()).unwrap();
        Problem::new(0.0, 1.0, case.problem.y0s.clone(), vec![spec]).unwrap()
    };
    let mut rows: Vec<Vec<f64>> = (0..obs.len()).map(|i| obs.states().row_slice(i).to_vec()).collect();
    rows[4][0] += 5.0;
    rows[5][1] -= 3.0;
    let perturbed = Trajectory::from_rows(obs.times().to_vec(), &rows).unwrap();
    let a = unrolled(&case.system, &with(obs), &case.config, Passes::Adaptive).unwrap();
    let b = unrolled(&case.system, &with(perturbed.clone()), &case.config, Passes::Adaptive).unwrap();
    assert_eq!(a, b);
    let obs = case.problem.specs[0].observed.clone();
    let a = adjoint(&case.system, &with(obs), &case.config).unwrap();
    let b = adjoint(&case.system, &with(perturbed), &case.config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn backtracking_descent_decreases_loss() {
    for case in smoke_cases().unwrap() {
        let r = unrolled(&case.system, &case.problem, &case.config, Passes::Adaptive).unwrap();
        let theta = case.system.params();
        let mut step = 1.0;
        let decreased = (0..30).any(|_| {
            let v: Vec<f64> = theta.values().iter().zip(r.grad.values()).map(|(p, g)| p - step * g).collect();
            let probe = case.system.with_params(&v).unwrap();
            let l = batch_loss(&probe, &case.problem, &case.config, Passes::Adaptive).unwrap().0;
            step *= 0.5;
            l < r.loss
        });
        assert!(decreased, "{}", case.name);
    }
}

#[test]
fn fd_step_halving_is_stable() {
    let case = &smoke_cases().unwrap()[1];
    let a = finite_difference(&case.system, &case.problem, &case.config, 1e-4).unwrap();
    let b = finite_difference(&case.system, &case.problem, &case.config, 5e-5).unwrap();
    let worst = a
        .grad
        .values()
        .iter()
        .zip(b.grad.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn comparison_metric() {
    let p = ParamVector::new(vec![], vec![]).unwrap();
    let c = compare(&p, &p);
    assert_eq!((c.rel_err, c.cosine), (0.0, 1.0));
    let mut a = ParamVector::empty();
    a.push("x", vec![2], &[1.0, 0.0]);
    let b = a.with_values(vec![0.0, 1.0]).unwrap();
    let c = compare(&a, &b);
    assert!(c.cosine.abs() < 1e-15);
    assert!((c.rel_err - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn sweep_reports_growing_divergence() {
    let case = &smoke_cases().unwrap()[1];
    let rows = kernel_scale_sweep(&case.system, &case.problem, &case.config, &[0.01, 1.0]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].kernel_sup < rows[1].kernel_sup);
    assert!(rows[0].comparison.rel_err <= rows[1].comparison.rel_err + 1e-12);
    assert!(render_sweep(&rows).lines().count() == 3);
}
