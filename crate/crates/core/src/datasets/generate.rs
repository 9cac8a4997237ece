use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::systems::{default_system, SystemName, DEFAULT_GAMMA, SYSTEM_VERSION};
use super::Trajectory;
use crate::analysis::{decompose_path, Decomposition};
use crate::error::{Error, Result};
use crate::numerics::QuadratureRule;
use crate::rng::Stream;
use crate::solver::{residual, solve_ivp, IdeSystem, IntervalSpec, SolverConfig};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;
/// Bound on the central-difference residual of every emitted curve.
pub const RESIDUAL_LIMIT: f64 = 5e-2;
/// Generation grids have at least this many nodes.
pub const MIN_GRID: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub system: SystemName,
    pub n_curves: usize,
    #[serde(default = "default_points")]
    pub points_per_curve: usize,
    /// Defaults to the system's window.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    /// Initial conditions are uniform in `[ic_low, ic_high]^n`.
    #[serde(default = "default_ic_low")]
    pub ic_low: f64,
    #[serde(default = "default_ic_high")]
    pub ic_high: f64,
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub quadrature: QuadratureRule,
}

fn default_points() -> usize {
    20
}

fn default_ic_low() -> f64 {
    -1.0
}

fn default_ic_high() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl GeneratorSpec {
    pub fn new(system: SystemName, n_curves: usize, seed: u64) -> Self {
        GeneratorSpec {
            system,
            n_curves,
            points_per_curve: default_points(),
            window: None,
            ic_low: default_ic_low(),
            ic_high: default_ic_high(),
            seed,
            gamma: DEFAULT_GAMMA,
            quadrature: QuadratureRule::default(),
        }
    }

    pub fn window(&self) -> (f64, f64) {
        self.window.unwrap_or_else(|| self.system.default_window())
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.window();
        if self.n_curves == 0 || self.points_per_curve < 2 {
            return Err(Error::invalid("need at least one curve of at least two points"));
        }
        if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::invalid(format!("bad window [{t0}, {t1}]")));
        }
        if !(self.ic_low <= self.ic_high) {
            return Err(Error::invalid("ic_low exceeds ic_high"));
        }
        self.quadrature.validate()
    }

    /// The generator system on this spec's window.
    pub fn system(&self) -> Result<IdeSystem> {
        let mut system = default_system(self.system, self.gamma)?;
        let (t0, _) = self.window();
        if let Some(term) = system.integral.as_mut() {
            term.interval = IntervalSpec::Volterra { a: t0 };
        }
        Ok(system)
    }

    /// Solver settings: a grid with the sample times on nodes.
    pub fn solver_config(&self) -> SolverConfig {
        let stride = MIN_GRID.saturating_sub(2) / (self.points_per_curve - 1) + 1;
        SolverConfig {
            grid_size: (self.points_per_curve - 1) * stride + 1,
            quadrature: self.quadrature,
            ..SolverConfig::default()
        }
    }

    fn stride(&self) -> usize {
        (self.solver_config().grid_size - 1) / (self.points_per_curve - 1)
    }

    /// Initial condition of curve `k`, from its own stream.
    pub fn initial_condition(&self, k: usize) -> Vec<f64> {
        let mut rng = Stream::new(self.seed, &["ic", &k.to_string()]);
        (0..self.system.state_dim())
            .map(|_| rng.uniform(self.ic_low, self.ic_high))
            .collect()
    }
}

/// Provenance of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub spec: GeneratorSpec,
    pub system_version: u32,
    pub description: String,
    pub solver: SolverConfig,
}

/// Dataset index: trajectory files relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub state_dim: usize,
    pub t0: f64,
    pub t1: f64,
    pub interval: Option<IntervalSpec>,
    pub files: Vec<String>,
    #[serde(default)]
    pub ground_truth: Vec<String>,
    #[serde(default)]
    pub generator: Option<Provenance>,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::data(origin, e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::data(origin, format!("unsupported manifest version {}", m.format_version)));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
    /// Generator decomposition at the sample times, when the system has one.
    pub ground_truth: Vec<Decomposition>,
}

struct Curve {
    trajectory: Trajectory,
    truth: Option<Decomposition>,
}

fn generate_curve(spec: &GeneratorSpec, system: &IdeSystem, config: &SolverConfig, k: usize) -> Result<Curve> {
    let (t0, t1) = spec.window();
    let y0 = spec.initial_condition(k);
    let sol = solve_ivp(system, &y0, t0, t1, config)?;
    let r = residual(system, &sol.y, config)?;
    if !(r <= RESIDUAL_LIMIT) {
        return Err(Error::Generation {
            curve: k,
            seed: spec.seed,
            residual: r,
            limit: RESIDUAL_LIMIT,
        });
    }
    let stride = spec.stride();
    let indices: Vec<usize> = (0..spec.points_per_curve).map(|j| j * stride).collect();
    let grid = sol.y.grid();
    let times: Vec<f64> = indices.iter().map(|&i| grid.node(i)).collect();
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| sol.y.values().row_slice(i).to_vec()).collect();
    let truth = match spec.system {
        SystemName::DecompCurves2d => Some(decompose_path(system, &sol.y, config, sol.converged)?.select(&indices)),
        _ => None,
    };
    Ok(Curve {
        trajectory: Trajectory::from_rows(times, &rows)?,
        truth,
    })
}

/// Solve the generator system from seeded initial conditions and sample
/// each solution at `points_per_curve` evenly spaced times.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let system = spec.system()?;
    let config = spec.solver_config();
    let curves: Vec<Curve> = (0..spec.n_curves)
        .into_par_iter()
        .map(|k| generate_curve(spec, &system, &config, k))
        .collect::<Result<_>>()?;
    let (t0, t1) = spec.window();
    let has_truth = curves.iter().any(|c| c.truth.is_some());
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        state_dim: system.state_dim(),
        t0,
        t1,
        interval: system.interval(),
        files: (0..spec.n_curves).map(|k| format!("curve_{k}.csv")).collect(),
        ground_truth: if has_truth {
            (0..spec.n_curves).map(|k| format!("truth_{k}.csv")).collect()
        } else {
            Vec::new()
        },
        generator: Some(Provenance {
            spec: spec.clone(),
            system_version: SYSTEM_VERSION,
            description: spec.system.description().into(),
            solver: config,
        }),
    };
    let mut trajectories = Vec::with_capacity(curves.len());
    let mut ground_truth = Vec::new();
    for c in curves {
        trajectories.push(c.trajectory);
        ground_truth.extend(c.truth);
    }
    Ok(Dataset {
        manifest,
        trajectories,
        ground_truth,
    })
}

impl Dataset {
    /// Wrap user trajectories; they must share dimension and window.
    pub fn from_trajectories(trajectories: Vec<Trajectory>, interval: Option<IntervalSpec>) -> Result<Self> {
        let first = trajectories.first().ok_or_else(|| Error::invalid("empty dataset"))?;
        let (n, t0, t1) = (first.dim(), first.t0(), first.t1());
        for t in &trajectories {
            if t.dim() != n {
                return Err(Error::invalid("trajectories differ in dimension"));
            }
        }
        let t0 = trajectories.iter().map(|t| t.t0()).fold(t0, f64::min);
        let t1 = trajectories.iter().map(|t| t.t1()).fold(t1, f64::max);
        Ok(Dataset {
            manifest: Manifest {
                format_version: MANIFEST_VERSION,
                state_dim: n,
                t0,
                t1,
                interval,
                files: (0..trajectories.len()).map(|k| format!("curve_{k}.csv")).collect(),
                ground_truth: Vec::new(),
                generator: None,
            },
            trajectories,
            ground_truth: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifest.state_dim
    }

    /// Write CSVs and the manifest into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        for (t, name) in self.trajectories.iter().zip(&self.manifest.files) {
            t.save_csv(&dir.join(name))?;
        }
        for (d, name) in self.ground_truth.iter().zip(&self.manifest.ground_truth) {
            std::fs::write(dir.join(name), d.rates_csv())?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_toml()?)?;
        Ok(path)
    }

    /// Load from a manifest path or the directory holding one.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::data(&manifest_path, e.to_string()))?;
        let manifest = Manifest::from_toml(&text, &manifest_path)?;
        let trajectories = manifest
            .files
            .iter()
            .map(|f| Trajectory::load_csv(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        for (t, f) in trajectories.iter().zip(&manifest.files) {
            if t.dim() != manifest.state_dim {
                return Err(Error::data(
                    dir.join(f),
                    format!("dimension {} but manifest says {}", t.dim(), manifest.state_dim),
                ));
            }
        }
        let ground_truth = manifest
            .ground_truth
            .iter()
            .map(|f| load_rates(&dir.join(f), manifest.state_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            manifest,
            trajectories,
            ground_truth,
        })
    }
}

/// Read a `t,markov_*,nonmarkov_*,total_*` table; paths are left empty.
fn load_rates(path: &Path, n: usize) -> Result<Decomposition> {
    use crate::ad::Tensor;
    let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data(path, "empty file"))?;
    if header.split(',').count() != 1 + 3 * n || !header.starts_with("t,markov_0") {
        return Err(Error::data(path, format!("malformed header `{header}`")));
    }
    let mut times = Vec::new();
    let mut cols: [Vec<f64>; 3] = Default::default();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::data(path, format!("row {}: cannot parse", i + 2)))?;
        if v.len() != 1 + 3 * n {
            return Err(Error::data(path, format!("row {}: wrong field count", i + 2)));
        }
        times.push(v[0]);
        for (c, col) in cols.iter_mut().enumerate() {
            col.extend_from_slice(&v[1 + c * n..1 + (c + 1) * n]);
        }
    }
    let t = times.len();
    let [m, nm, tot] = cols;
    Ok(Decomposition {
        times,
        markovian_rate: Tensor::matrix(t, n, m)?,
        nonmarkovian_rate: Tensor::matrix(t, n, nm)?,
        total_rate: Tensor::matrix(t, n, tot)?,
        markovian_path: Tensor::zeros(&[t, n]),
        nonmarkovian_path: Tensor::zeros(&[t, n]),
        converged: true,
    })
}

/// Proper crossings between non-adjacent segments of a planar polyline.
pub fn self_intersections(points: &[[f64; 2]]) -> usize {
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let mut count = 0;
    let segs = points.len().saturating_sub(1);
    for i in 0..segs {
        let (p1, p2) = (points[i], points[i + 1]);
        for j in i + 2..segs {
            let (q1, q2) = (points[j], points[j + 1]);
            if cross(p1, p2, q1) * cross(p1, p2, q2) < 0.0 && cross(q1, q2, p1) * cross(q1, q2, p2) < 0.0 {
                count += 1;
            }
        }
    }
    count
}
