use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::nets::{IntegrandNet, Mlp, MlpSpec};
use crate::rng::Stream;
use crate::solver::{AnalyticKernel, AnalyticMap, Dynamics, Integrand, IntegralTerm, IntervalSpec, Kernel};

fn rotation() -> Dynamics {
    Dynamics::Analytic(AnalyticMap::new(
        "rot",
        3,
        2,
        |x, o| {
            o[0] = -x[1];
            o[1] = x[0];
        },
        |_, j| j.copy_from_slice(&[0.0, -1.0, 0.0, 1.0, 0.0, 0.0]),
    ))
}

fn identity(n: usize) -> Arc<AnalyticMap> {
    AnalyticMap::new(
        "id",
        n,
        n,
        |x, o| o.copy_from_slice(x),
        move |_, j| {
            j.fill(0.0);
            for i in 0..n {
                j[i * n + i] = 1.0;
            }
        },
    )
}

fn memory(f: Option<Dynamics>) -> IdeSystem {
    let kernel = AnalyticKernel::new("decay", |t, s, o| {
        o.fill(0.0);
        o[0] = -0.5 * (s - t).exp();
        o[3] = -0.5 * (s - t).exp();
    });
    IdeSystem::new(
        2,
        2,
        f,
        Some(IntegralTerm {
            kernel: Kernel::Analytic(kernel),
            integrand: Integrand::Analytic(identity(2)),
            interval: IntervalSpec::Volterra { a: 0.0 },
        }),
    )
    .unwrap()
}

#[test]
fn zero_kernel_is_all_markovian() {
    let sys = IdeSystem::new(2, 0, Some(rotation()), None).unwrap();
    let config = SolverConfig::default();
    let d = decompose_system(&sys, &[1.0, 0.0], 0.0, 2.0, &config).unwrap();
    assert!(d.nonmarkovian_rate.data().iter().all(|&v| v == 0.0));
    let sol = solve_ivp(&sys, &[1.0, 0.0], 0.0, 2.0, &config).unwrap();
    for k in 0..d.times.len() {
        for i in 0..2 {
            let y = [1.0, 0.0][i] + d.markovian_path.get(k, i);
            assert!((y - sol.y.values().get(k, i)).abs() <= 1e-4);
        }
    }
    assert!(d.rate_sum_error() <= 1e-10);
}

#[test]
fn zero_local_term_is_all_nonmarkovian() {
    let d = decompose_system(&memory(None), &[1.0, -1.0], 0.0, 2.0, &SolverConfig::default()).unwrap();
    assert!(d.markovian_rate.data().iter().all(|&v| v == 0.0));
    assert!(d.nonmarkovian_rate.max_abs() > 0.1);
    assert!(d.rate_sum_error() <= 1e-10);
}

#[test]
fn generator_split_matches_direct_evaluation() {
    let sys = memory(Some(rotation()));
    let config = SolverConfig::default();
    let sol = solve_ivp(&sys, &[0.5, 0.2], 0.0, 2.0, &config).unwrap();
    let d = decompose_path(&sys, &sol.y, &config, sol.converged).unwrap();
    let y = sol.y.values();
    let h = sol.y.grid().step();
    for k in [0, 57, 200] {
        assert_eq!(d.markovian_rate.row_slice(k), &[-y.get(k, 1), y.get(k, 0)]);
        // Trapezoid oracle for the memory term.
        let t = d.times[k];
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..k {
                let (s0, s1) = (d.times[j], d.times[j + 1]);
                acc += 0.5 * h * (-0.5 * (s0 - t).exp() * y.get(j, i) - 0.5 * (s1 - t).exp() * y.get(j + 1, i));
            }
            assert!((d.nonmarkovian_rate.get(k, i) - acc).abs() <= 1e-4, "{k} {i}");
        }
    }
    assert!(d.rates_csv().starts_with("t,markov_0,markov_1,nonmarkov_0,nonmarkov_1,total_0,total_1\n"));
    assert!(d.paths_csv().starts_with("t,markov_disp_0"));
}

#[test]
fn identity_integrand_embeds_states() {
    let mut params = vec![0.0; MlpSpec::new(2, &[], 2).param_count()];
    params[0] = 1.0;
    params[3] = 1.0;
    let f = Mlp::from_params(MlpSpec::new(2, &[], 2), params).unwrap();
    let sys = IdeSystem::new(
        2,
        2,
        None,
        Some(IntegralTerm {
            kernel: Kernel::Analytic(AnalyticKernel::new("zero", |_, _, o| o.fill(0.0))),
            integrand: Integrand::Net(IntegrandNet::new(f).unwrap()),
            interval: IntervalSpec::Volterra { a: 0.0 },
        }),
    )
    .unwrap();
    let states = Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
    let e = embed_states(&sys, &[0.0, 1.0], &states).unwrap();
    assert_eq!(e.points, states);
    let constant = Tensor::from_rows(&[vec![0.1, 0.1], vec![0.1, 0.1]]).unwrap();
    let e = embed_states(&sys, &[0.0, 1.0], &constant).unwrap();
    assert_eq!(e.points.row_slice(0), e.points.row_slice(1));
    assert!(e.to_csv().starts_with("t,z0,z1\n"));
}

#[test]
fn r_squared_examples() {
    let truth = Tensor::column(&[1.0, 2.0, 4.0]);
    assert_eq!(r_squared(&truth, &truth).unwrap(), Some(1.0));
    let mean = Tensor::column(&[7.0 / 3.0; 3]);
    assert!(r_squared(&mean, &truth).unwrap().unwrap().abs() < 1e-15);
    assert_eq!(r_squared(&truth, &Tensor::column(&[1.0; 3])).unwrap(), None);
}

fn line(n: usize) -> (Tensor, Vec<f64>) {
    let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![0.6 * i as f64, 0.8 * i as f64]).collect();
    (Tensor::from_rows(&pts).unwrap(), (0..n).map(|i| i as f64).collect())
}

#[test]
fn knn_regression_examples() {
    let (pts, arc) = line(50);
    assert!(knn_regress(&pts, &arc, 1).unwrap().unwrap() >= 0.99);
    assert_eq!(knn_regress(&pts, &[2.0; 50], 3).unwrap(), None);
    let mut rng = Stream::new(3, &["knn"]);
    let noise: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.unit(), rng.unit()]).collect();
    let targets: Vec<f64> = (0..200).map(|_| rng.unit()).collect();
    let r2 = knn_regress(&Tensor::from_rows(&noise).unwrap(), &targets, 3).unwrap().unwrap();
    assert!(r2 <= 0.2, "{r2}");
    assert!(knn_regress(&pts, &arc, 50).is_err());
}

#[test]
fn knn_classification_examples() {
    let mut rng = Stream::new(4, &["clusters"]);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let c = (i % 2) as f64 * 10.0;
        pts.push(vec![c + rng.unit(), rng.unit()]);
        labels.push(i % 2);
    }
    let pts = Tensor::from_rows(&pts).unwrap();
    assert_eq!(knn_classify(&pts, &labels, 3).unwrap(), 1.0);
    let noise: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.unit(), rng.unit()]).collect();
    let random: Vec<usize> = (0..200).map(|_| (rng.next_u64() % 2) as usize).collect();
    let acc = knn_classify(&Tensor::from_rows(&noise).unwrap(), &random, 3).unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    assert!(knn_classify(&pts, &labels[..], 60).is_err());
}

#[test]
fn knn_tie_goes_to_nearest_label() {
    // Point 0's two neighbours have labels 1 (nearer) and 2.
    let pts = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![-2.0]]).unwrap();
    let nb_acc = knn_classify(&pts, &[1, 1, 2], 2).unwrap();
    // 0 -> {1 (label 1), 2 (label 2)} tie -> 1: correct.
    // 1 -> {0 (label 1), 2} -> 1: correct. 2 -> {0, 1} -> 1: wrong.
    assert!((nb_acc - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn pca_examples() {
    let mut rng = Stream::new(5, &["pca"]);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let (a, b) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            vec![1.0 + a + b, 2.0 - a, 0.5 * b, a - 3.0 * b]
        })
        .collect();
    let x = Tensor::from_rows(&rows).unwrap();
    let p = pca_project(&x, 2).unwrap();
    let err = p.reconstruct().data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-10, "{err}");
    assert!(p.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-12);
    for c in 0..2 {
        let row = p.components.row_slice(c);
        let lead = row.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(lead > 0.0);
    }
    assert!(pca_project(&x, 3).is_err());

    let noise: Vec<Vec<f64>> = (0..2000).map(|_| (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let p = pca_project(&Tensor::from_rows(&noise).unwrap(), 3).unwrap();
    let kept: f64 = p.explained_variance_ratio.iter().sum();
    assert!((kept - 0.3).abs() <= 0.1, "{kept}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn knn_regression_is_isometry_invariant(angle in 0.0f64..std::f64::consts::TAU, dx in -5.0f64..5.0, dy in -5.0f64..5.0, seed in 0u64..1000) {
        let mut rng = Stream::new(seed, &["iso"]);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.unit(), rng.unit()]).collect();
        let targets: Vec<f64> = pts.iter().map(|p| p[0] + p[1] * p[1]).collect();
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![c * p[0] - s * p[1] + dx, s * p[0] + c * p[1] + dy]).collect();
        let a = knn_regress(&Tensor::from_rows(&pts).unwrap(), &targets, 3).unwrap().unwrap();
        let b = knn_regress(&Tensor::from_rows(&moved).unwrap(), &targets, 3).unwrap().unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
