use super::*;
use crate::rng::Stream;

fn constant_data(y0: [f64; 2], points: usize) -> Vec<Trajectory> {
    let times = linspace(0.0, 2.0, points);
    let rows = vec![y0.to_vec(); points];
    vec![Trajectory::from_rows(times, &rows).unwrap()]
}

fn small_nide() -> ModelSpec {
    let mut spec = ModelSpec::nide(2, 2, &[8], &[6], &[4]);
    spec.output_init_scale = 0.01;
    spec
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        schedule: CosineSchedule {
            max_lr: 1e-2,
            min_lr: 1e-4,
            period: 50,
        },
        solver: SolverConfig {
            grid_size: 21,
            max_iter: 4,
            ..SolverConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn spiral_data(count: usize, points: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = Stream::new(seed, &["test-ic"]);
    (0..count)
        .map(|_| {
            let (a, b) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            let times = linspace(0.0, 3.0, points);
            let rows: Vec<Vec<f64>> = times
                .iter()
                .map(|&t| {
                    let (s, c) = t.sin_cos();
                    let d = (-0.1 * t).exp();
                    vec![d * (a * c - b * s), d * (a * s + b * c)]
                })
                .collect();
            Trajectory::from_rows(times, &rows).unwrap()
        })
        .collect()
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn constant_target_is_fitted() {
    let data = constant_data([0.4, -0.3], 10);
    let out = train(&data, &small_nide(), &quick_config(200)).unwrap();
    assert!(out.divergence.is_none());
    let last = out.checkpoint.final_train_mse().unwrap();
    assert!(last <= 1e-6, "{last}");
    assert_eq!(out.checkpoint.history.len(), 200);
}

#[test]
fn mask_draws_suffixes() {
    let policy = MaskPolicy::TailFraction { max_fraction: 0.5 };
    let mut seen = std::collections::BTreeSet::new();
    for k in 0..200 {
        let m = policy.draw(20, k, 3);
        let hidden = m.iter().filter(|&&v| !v).count();
        assert!(hidden <= 10);
        assert!(m[..20 - hidden].iter().all(|&v| v));
        seen.insert(hidden);
    }
    assert_eq!(seen.len(), 11);
    assert_eq!(policy.draw(20, 4, 3), policy.draw(20, 4, 3));
    assert_eq!(policy.draw(1, 0, 0), vec![true]);
    assert_eq!(MaskPolicy::None.draw(3, 0, 0), vec![true; 3]);
    assert!(MaskPolicy::TailFraction { max_fraction: 1.5 }.validate().is_err());
}

#[test]
fn masked_observations_do_not_touch_the_gradient() {
    let model = small_nide();
    let config = TrainConfig {
        mask: MaskPolicy::TailFraction { max_fraction: 0.5 },
        seed: 11,
        ..quick_config(1)
    };
    let data = spiral_data(4, 12, 1);
    let prepared = prepare(&data, &model, &config).unwrap();
    assert!(prepared.specs.iter().any(|s| s.active() < 12));
    let mut perturbed = prepared.clone();
    for spec in &mut perturbed.specs {
        let mut states = spec.observed.states().clone();
        for i in 0..spec.mask.len() {
            if !spec.mask[i] {
                for v in &mut states.data_mut()[i * 2..i * 2 + 2] {
                    *v += 100.0;
                }
            }
        }
        spec.observed = Trajectory::new(spec.observed.times().to_vec(), states).unwrap();
    }
    let system = model.build(config.seed).unwrap();
    for mode in [GradMode::Unrolled, GradMode::Adjoint] {
        let config = TrainConfig { grad_mode: mode, ..config.clone() };
        let a = batch_gradient(&system, &prepared.specs.iter().collect::<Vec<_>>(), &config).unwrap();
        let b = batch_gradient(&system, &perturbed.specs.iter().collect::<Vec<_>>(), &config).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(bits(&a.1), bits(&b.1));
    }
}

#[test]
fn training_is_bit_reproducible_and_checkpoints_round_trip() {
    let data = spiral_data(5, 10, 2);
    let config = TrainConfig {
        mask: MaskPolicy::TailFraction { max_fraction: 0.5 },
        seed: 5,
        batch_size: 2,
        ..quick_config(6)
    };
    let a = train(&data, &small_nide(), &config).unwrap().checkpoint;
    let b = train(&data, &small_nide(), &config).unwrap().checkpoint;
    assert_eq!(bits(a.system.params().values()), bits(b.system.params().values()));
    assert_eq!(history_csv(&a.history), history_csv(&b.history));

    let dir = tempfile::tempdir().unwrap();
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    a.save(&da).unwrap();
    b.save(&db).unwrap();
    for f in [CHECKPOINT_FILE, "f.bin", "kernel.bin", "integrand.bin"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
    let back = Checkpoint::load(&da).unwrap();
    assert_eq!(bits(back.system.params().values()), bits(a.system.params().values()));
    assert_eq!(back.history, a.history);
    assert_eq!(back.time_map, a.time_map);
    assert_eq!(evaluate(&back, &data, None).unwrap(), evaluate(&a, &data, None).unwrap());
    back.check_compatible(&small_nide(), &config).unwrap();
    assert!(back.check_compatible(&small_nide(), &quick_config(7)).is_err());

    // A manifest edited after the fact no longer matches its hash.
    let path = da.join(CHECKPOINT_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("epochs = 6", "epochs = 60")).unwrap();
    assert!(Checkpoint::load(&da).is_err());
}

#[test]
fn configs_with_unset_options_survive_toml() {
    let config = TrainConfig {
        downsample_to: None,
        mask: MaskPolicy::TailFraction { max_fraction: 0.25 },
        ..quick_config(3)
    };
    let back: TrainConfig = toml::from_str(&toml::to_string(&config).unwrap()).unwrap();
    assert_eq!(back, config);
    let mut model = small_nide();
    model.f_hidden = None;
    let back: ModelSpec = toml::from_str(&toml::to_string(&model).unwrap()).unwrap();
    assert_eq!(back, model);

    let ck = train(&constant_data([0.5, -0.5], 6), &model, &config).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    Checkpoint::load(dir.path()).unwrap().check_compatible(&model, &config).unwrap();
}

#[test]
fn spiral_loss_falls_in_epoch_windows() {
    let data = spiral_data(6, 10, 3);
    let config = TrainConfig {
        batch_size: 6,
        ..quick_config(100)
    };
    let out = train(&data, &small_nide(), &config).unwrap();
    let losses: Vec<f64> = out.checkpoint.history.iter().map(|r| r.train_mse).collect();
    let w: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(w[1] <= w[0], "{w:?}");
    assert!(losses[99] < losses[0]);
}

#[test]
fn non_finite_parameters_abort_after_two_failures() {
    let data = spiral_data(2, 6, 4);
    let model = small_nide();
    let config = quick_config(5);
    let prepared = prepare(&data, &model, &config).unwrap();
    let mut system = model.build(0).unwrap();
    let mut v = system.params().values().to_vec();
    v[0] = f64::NAN;
    system.set_params(&v).unwrap();
    let out = train_prepared(system, &prepared, &model, &config).unwrap();
    let d = out.divergence.unwrap();
    assert_eq!(d.epoch, 0);
    assert_eq!(out.retries, 2);
    assert_eq!(out.checkpoint.epoch, 0);
    assert!(out.checkpoint.history.is_empty());
}

#[test]
fn baseline_matches_parameter_count() {
    let nide = ModelSpec::nide(2, 4, &[16, 16], &[16, 16], &[16]);
    let target = nide.param_count();
    assert!((900..=1100).contains(&target), "{target}");
    let b = make_node_baseline(&nide).unwrap();
    assert!(b.warning.is_none());
    assert!(b.relative_gap() <= 0.02, "{} vs {}", b.count, b.target);
    assert_eq!(b.spec.kind, ModelKind::Node);
    assert!(b.spec.build(0).unwrap().integral.is_none());

    // A NIDE smaller than the narrowest NODE of the same depth cannot be matched.
    let tiny = ModelSpec::nide(2, 1, &[1, 1, 1, 1, 1, 1], &[], &[]);
    let b = make_node_baseline(&tiny).unwrap();
    assert!(b.warning.is_some());
}

/// `dy/du = -span * y` in normalized time is `y' = -y` in original time.
fn decay_checkpoint(span: f64) -> Checkpoint {
    let model = ModelSpec::node(2, &[]);
    let mut system = model.build(0).unwrap();
    let mut v = vec![0.0; system.param_count()];
    v[0] = -span;
    v[3] = -span;
    system.set_params(&v).unwrap();
    let config = TrainConfig {
        solver: SolverConfig {
            grid_size: 401,
            ..SolverConfig::default()
        },
        ..TrainConfig::default()
    };
    Checkpoint::new(model, config, TimeMap { t0: 0.0, t1: span }, system, 0, Vec::new()).unwrap()
}

#[test]
fn linear_decay_extrapolates_analytically() {
    let ckpt = decay_checkpoint(2.0);
    let prefix = Trajectory::from_rows(linspace(0.0, 2.0, 5), &vec![vec![1.0, -0.5]; 5]).unwrap();
    let future: Vec<f64> = (1..=4).map(|k| 2.0 + 0.5 * k as f64).collect();
    let ex = extrapolate(&ckpt, &prefix, &future).unwrap();
    assert_eq!(ex.horizon(), 4);
    for (k, &t) in ex.trajectory.times().iter().enumerate() {
        for (j, y0) in [1.0, -0.5].iter().enumerate() {
            let err = (ex.trajectory.states().get(k, j) - y0 * (-t).exp()).abs();
            assert!(err <= 1e-8, "t = {t}: {err}");
        }
    }
    // Linearity: any initial condition follows the analytic solution.
    let (p, ok) = predict_from_ic(&ckpt, &[3.0, 2.0], 0.5, 3.0, 11).unwrap();
    assert!(ok);
    for (k, &t) in p.times().iter().enumerate() {
        assert!((p.states().get(k, 0) - 3.0 * (0.5 - t).exp()).abs() <= 1e-7);
    }
    let horizon0 = extrapolate(&ckpt, &prefix, &[]).unwrap();
    assert_eq!(horizon0.trajectory, predict(&ckpt, &prefix).unwrap().0);
}

#[test]
fn evaluation_of_exact_predictions() {
    let ckpt = decay_checkpoint(2.0);
    let data: Vec<Trajectory> = [[1.0, 0.5], [-0.5, 2.0], [0.2, 0.1]]
        .iter()
        .map(|y0| {
            predict_from_ic(&ckpt, y0, 0.0, 2.0, 8).unwrap().0
        })
        .collect();
    let m = evaluate(&ckpt, &data, None).unwrap();
    assert_eq!(m.mse, 0.0);
    assert_eq!(m.r2, Some(1.0));
    assert_eq!(m.per_point_r2[3], Some(1.0));
    assert_eq!(m.points, 24);
    let masks = vec![vec![true, false, false, false, false, false, false, false]; 3];
    let m = evaluate(&ckpt, &data, Some(&masks)).unwrap();
    assert_eq!(m.points, 3);
    assert_eq!(m.per_point_mse[1], None);
    assert!(m.render().contains("undefined"));

    let report = horizon_mse(&ckpt, &data, 5).unwrap();
    assert_eq!(report.counts, vec![3, 3, 3]);
    assert!(report.mse.iter().all(|&v| v <= 1e-20));
    assert!(report.to_csv().starts_with("metric,t+1,t+2,t+3\nmse,"));
}

#[test]
fn node_decomposition_has_no_memory_term() {
    let ckpt = decay_checkpoint(2.0);
    let traj = Trajectory::from_rows(linspace(0.0, 2.0, 5), &vec![vec![1.0, 1.0]; 5]).unwrap();
    let d = decompose(&ckpt, &traj).unwrap();
    assert_eq!(d.times, traj.times());
    assert!(d.nonmarkovian_rate.data().iter().all(|&v| v == 0.0));
    // Rates are in original time units: y' = -y.
    for (k, &t) in d.times.iter().enumerate() {
        assert!((d.markovian_rate.get(k, 0) + (-t).exp()).abs() <= 1e-8);
    }
    assert!(embed(&ckpt, &traj).is_err());
    let nide = Checkpoint::new(
        small_nide(),
        TrainConfig::default(),
        TimeMap { t0: 0.0, t1: 1.0 },
        small_nide().build(1).unwrap(),
        0,
        Vec::new(),
    )
    .unwrap();
    let e = embed(&nide, &traj).unwrap();
    assert_eq!(e.points.shape(), &[5, 2]);
}

#[test]
fn aligned_grid_places_observations_on_nodes() {
    assert_eq!(aligned_grid(&linspace(0.0, 1.0, 20), 201), 210);
    assert_eq!(aligned_grid(&linspace(0.0, 1.0, 3), 5), 5);
    assert_eq!(aligned_grid(&[0.0, 0.1, 1.0], 11), 11);
    assert_eq!(aligned_grid(&linspace(0.0, 2.0, 5), 11), 21);
}
