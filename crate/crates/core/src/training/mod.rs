//! Fitting systems to trajectory datasets, checkpoints, and evaluation of
//! fitted models on held-out times and initial conditions.

mod adam;
mod checkpoint;
mod eval;
mod model;

pub use adam::{Adam, AdamConfig, CosineSchedule};
pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_FILE, CHECKPOINT_VERSION};
pub use eval::{
    decompose, embed, evaluate, extrapolate, horizon_mse, predict, predict_from_ic, Extrapolation, HorizonReport,
    Metrics,
};
pub use model::{make_node_baseline, Baseline, IntervalKind, ModelKind, ModelSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Trajectory;
use crate::error::{Error, Result};
use crate::gradients::{gradient, GradMode, LossSpec, Problem};
use crate::rng::Stream;
use crate::solver::{IdeSystem, SolverConfig};

/// Which observations are hidden from the loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskPolicy {
    #[default]
    None,
    /// Hide a suffix whose length is uniform over `0..=floor(max_fraction * T)`,
    /// drawn once per trajectory. The initial point is never hidden.
    TailFraction { max_fraction: f64 },
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskPolicy::TailFraction { max_fraction } if !(0.0..=1.0).contains(&max_fraction) => {
                Err(Error::invalid("max_fraction must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// `true` marks an observation that enters the loss.
    pub fn draw(&self, len: usize, index: usize, seed: u64) -> Vec<bool> {
        match *self {
            MaskPolicy::None => vec![true; len],
            MaskPolicy::TailFraction { max_fraction } => {
                let max = ((max_fraction * len as f64).floor() as usize).min(len.saturating_sub(1));
                let hidden = Stream::new(seed, &["mask", &index.to_string()]).below_inclusive(max as u64) as usize;
                (0..len).map(|i| i < len - hidden).collect()
            }
        }
    }
}

/// Affine map of the data window onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub t0: f64,
    pub t1: f64,
}

impl TimeMap {
    pub fn fit(trajectories: &[Trajectory]) -> Result<Self> {
        let t0 = trajectories.iter().map(Trajectory::t0).fold(f64::INFINITY, f64::min);
        let t1 = trajectories.iter().map(Trajectory::t1).fold(f64::NEG_INFINITY, f64::max);
        if !(t1 > t0) {
            return Err(Error::invalid("trajectories span an empty time window"));
        }
        Ok(TimeMap { t0, t1 })
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn to_normalized(&self, t: f64) -> f64 {
        (t - self.t0) / self.span()
    }

    pub fn to_original(&self, u: f64) -> f64 {
        self.t0 + u * self.span()
    }

    pub fn normalize(&self, traj: &Trajectory) -> Result<Trajectory> {
        traj.retimed(1.0 / self.span(), -self.t0 / self.span())
    }

    pub fn denormalize(&self, traj: &Trajectory) -> Result<Trajectory> {
        traj.retimed(self.span(), self.t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub schedule: CosineSchedule,
    pub grad_mode: GradMode,
    /// Evenly spaced points kept per trajectory; `None` keeps all.
    /// Serialized as 0 for `None` so that the field never goes missing and
    /// falls back to the default.
    #[serde(with = "zero_is_none")]
    pub downsample_to: Option<usize>,
    pub mask: MaskPolicy,
    pub seed: u64,
    /// `grid_size` counts nodes over the unit normalized window; other
    /// windows scale it and round so that uniform observations fall on nodes.
    pub solver: SolverConfig,
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = usize::deserialize(d)?;
        Ok((v > 0).then_some(v))
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            schedule: CosineSchedule::default(),
            grad_mode: GradMode::Unrolled,
            downsample_to: Some(20),
            mask: MaskPolicy::None,
            seed: 0,
            solver: SolverConfig {
                grid_size: 101,
                ..SolverConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.downsample_to.is_some_and(|d| d < 2) {
            return Err(Error::invalid("downsample_to must keep at least 2 points"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        self.mask.validate()?;
        self.solver.validate()
    }

    /// Solver settings for observations at normalized `times`.
    pub fn solver_for(&self, times: &[f64]) -> SolverConfig {
        SolverConfig {
            grid_size: aligned_grid(times, self.solver.grid_size),
            ..self.solver.clone()
        }
    }

    pub fn solver_for_window(&self, t0: f64, t1: f64, points: usize) -> SolverConfig {
        let times = linspace(t0, t1, points.max(2));
        self.solver_for(&times)
    }
}

/// Node count for `times` at `unit_nodes` per unit window; uniform times
/// land on nodes.
pub fn aligned_grid(times: &[f64], unit_nodes: usize) -> usize {
    let density = unit_nodes.saturating_sub(1).max(1) as f64;
    let (first, last) = (times[0], times[times.len() - 1]);
    let span = last - first;
    let intervals = times.len() - 1;
    let h = span / intervals as f64;
    let uniform = intervals > 0 && times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * span.abs().max(1.0));
    if uniform && intervals > 0 {
        let per = ((density * span / intervals as f64).ceil() as usize).max(1);
        intervals * per + 1
    } else {
        ((density * span).ceil() as usize).max(1) + 1
    }
}

pub fn linspace(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    let h = (t1 - t0) / (points - 1) as f64;
    (0..points).map(|i| if i + 1 == points { t1 } else { t0 + h * i as f64 }).collect()
}

/// Evenly spaced indices, always including both ends.
pub fn downsample(traj: &Trajectory, points: usize) -> Result<Trajectory> {
    let len = traj.len();
    if points >= len {
        return Ok(traj.clone());
    }
    let idx: Vec<usize> = (0..points)
        .map(|i| ((i as f64) * (len - 1) as f64 / (points - 1) as f64).round() as usize)
        .collect();
    traj.select(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,lr,train_mse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch,
            crate::datasets::format_f64(r.lr),
            crate::datasets::format_f64(r.train_mse)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub reason: String,
}

/// Result of a run; on divergence the checkpoint holds the last good parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub divergence: Option<Divergence>,
    /// Failed epoch attempts.
    pub retries: usize,
}

/// Normalized, downsampled, masked loss targets for a dataset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub time_map: TimeMap,
    pub specs: Vec<LossSpec>,
}

pub fn prepare(data: &[Trajectory], model: &ModelSpec, config: &TrainConfig) -> Result<PreparedData> {
    if data.is_empty() {
        return Err(Error::invalid("no trajectories to train on"));
    }
    if let Some(t) = data.iter().find(|t| t.dim() != model.state_dim) {
        return Err(Error::invalid(format!(
            "trajectory has dimension {}, model {}",
            t.dim(),
            model.state_dim
        )));
    }
    let reduced = data
        .iter()
        .map(|t| match config.downsample_to {
            Some(p) => downsample(t, p),
            None => Ok(t.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    let time_map = TimeMap::fit(&reduced)?;
    let specs = reduced
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mask = config.mask.draw(t.len(), i, config.seed);
            LossSpec::new(time_map.normalize(t)?, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData { time_map, specs })
}

/// Mean per-trajectory loss and its gradient over `specs`.
///
/// Members sharing observation times are solved as one batch; groups run
/// concurrently and are reduced in a fixed order.
pub fn batch_gradient(system: &IdeSystem, specs: &[&LossSpec], config: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    let mut groups: Vec<Vec<&LossSpec>> = Vec::new();
    for s in specs {
        match groups.iter_mut().find(|g| g[0].observed.times() == s.observed.times()) {
            Some(g) => g.push(s),
            None => groups.push(vec![s]),
        }
    }
    let parts = groups
        .par_iter()
        .map(|g| {
            let problem = Problem::from_specs(g.iter().map(|s| (*s).clone()).collect())?;
            let solver = config.solver_for(g[0].observed.times());
            let r = gradient(system, &problem, &solver, config.grad_mode)?;
            Ok((g.len(), r.loss, r.grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = specs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; system.param_count()];
    for (count, l, g) in parts {
        let w = count as f64 / total;
        loss += w * l;
        for (acc, v) in grad.iter_mut().zip(g.values()) {
            *acc += w * v;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, grad))
}

fn run_epoch(
    system: &mut IdeSystem,
    adam: &mut Adam,
    specs: &[LossSpec],
    config: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<f64> {
    let order = Stream::new(config.seed, &["shuffle", &epoch.to_string()]).permutation(specs.len());
    let mut weighted = 0.0;
    let mut values = system.params().values().to_vec();
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<&LossSpec> = chunk.iter().map(|&i| &specs[i]).collect();
        let (loss, grad) = batch_gradient(system, &batch, config)?;
        weighted += loss * chunk.len() as f64;
        adam.step(&mut values, &grad, lr)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter update".into()));
        }
        system.set_params(&values)?;
    }
    Ok(weighted / specs.len() as f64)
}

/// Fit a freshly initialized `model` to `data`.
///
/// A failed epoch (non-finite loss or solver error) is retried once from its
/// starting state with the learning rate permanently halved; a second
/// failure ends the run.
pub fn train(data: &[Trajectory], model: &ModelSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    let prepared = prepare(data, model, config)?;
    let system = model.build(config.seed)?;
    train_prepared(system, &prepared, model, config)
}

/// Training loop from an explicit starting system.
pub fn train_prepared(
    mut system: IdeSystem,
    prepared: &PreparedData,
    model: &ModelSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut adam = Adam::new(config.optimizer, system.param_count());
    let mut history = Vec::with_capacity(config.epochs);
    let mut lr_factor = 1.0;
    let mut failures = 0;
    let mut divergence = None;
    let mut epoch = 0;
    while epoch < config.epochs {
        let lr = lr_factor * config.schedule.lr(epoch);
        let (saved_system, saved_adam) = (system.clone(), adam.clone());
        match run_epoch(&mut system, &mut adam, &prepared.specs, config, epoch, lr) {
            Ok(train_mse) => {
                history.push(HistoryRow { epoch, lr, train_mse });
                epoch += 1;
            }
            Err(e @ (Error::NonFinite(_) | Error::Solver { .. })) => {
                system = saved_system;
                adam = saved_adam;
                failures += 1;
                if failures >= 2 {
                    divergence = Some(Divergence {
                        epoch,
                        reason: e.to_string(),
                    });
                    break;
                }
                lr_factor *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model.clone(), config.clone(), prepared.time_map, system, epoch, history)?,
        divergence,
        retries: failures,
    })
}

#[cfg(test)]
mod tests;
