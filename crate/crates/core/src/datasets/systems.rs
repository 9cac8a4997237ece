//! Versioned analytic generator systems.
//!
//! Every constant below is part of the system version; changing one
//! requires bumping [`SYSTEM_VERSION`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{AnalyticKernel, AnalyticMap, Dynamics, IdeSystem, Integrand, IntegralTerm, IntervalSpec, Kernel};

pub const SYSTEM_VERSION: u32 = 1;
pub const DEFAULT_GAMMA: f64 = 0.1;
/// `cosh` is evaluated on `y` clamped to `±CLAMP`.
pub const CLAMP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    IdeSpiral2d,
    IdeCurves4d,
    OdeSpiral2d,
    DecompCurves2d,
}

impl SystemName {
    pub const ALL: [SystemName; 4] = [
        SystemName::IdeSpiral2d,
        SystemName::IdeCurves4d,
        SystemName::OdeSpiral2d,
        SystemName::DecompCurves2d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemName::IdeSpiral2d => "ide_spiral_2d",
            SystemName::IdeCurves4d => "ide_curves_4d",
            SystemName::OdeSpiral2d => "ode_spiral_2d",
            SystemName::DecompCurves2d => "decomp_curves_2d",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            SystemName::IdeCurves4d => 4,
            _ => 2,
        }
    }

    pub fn default_window(self) -> (f64, f64) {
        match self {
            SystemName::DecompCurves2d => (0.0, 4.0),
            _ => (0.0, 5.0),
        }
    }

    /// Human-readable statement of the system, recorded in manifests.
    pub fn description(self) -> &'static str {
        match self {
            SystemName::IdeSpiral2d => {
                "f = 0.5*[[0,-1],[1,0]] y; K = gamma*[[cos(t-s), sin(2s)], [-sin(t-s), cos(2t)]]; \
                 F = cosh(clamp(y,-3,3)); Volterra(t0)"
            }
            SystemName::IdeCurves4d => {
                "f = blockdiag(0.5*[[0,-1],[1,0]], 0.3*[[0,-1],[1,0]]) y; \
                 K = gamma*[[cos(t-s), sin(2s)], [-sin(t-s), cos(2t)], [cos(2(t-s)), -sin(s)], [sin(2(t-s)), cos(t)]]; \
                 F = cosh(clamp([y0+y2, y1+y3],-3,3)); Volterra(t0)"
            }
            SystemName::OdeSpiral2d => "f = [[-0.1,-1],[1,-0.1]] y; K = 0",
            SystemName::DecompCurves2d => {
                "f = [[-0.2,-1],[1,-0.2]] y; K = 10*gamma*[[cos(t-s), -sin(t-s)], [sin(t-s), cos(t-s)]]; \
                 F = tanh(y); Volterra(t0)"
            }
        }
    }
}

impl fmt::Display for SystemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown system `{s}`")))
    }
}

/// `y -> A y` for a row `[y | t]`.
fn linear(name: &str, a: Vec<f64>, n: usize) -> Dynamics {
    let jac: Vec<f64> = (0..n)
        .flat_map(|i| a[i * n..(i + 1) * n].iter().copied().chain([0.0]).collect::<Vec<_>>())
        .collect();
    let a2 = a.clone();
    Dynamics::Analytic(AnalyticMap::new(
        name,
        n + 1,
        n,
        move |x, o| {
            for i in 0..n {
                o[i] = (0..n).map(|j| a2[i * n + j] * x[j]).sum();
            }
        },
        move |_, j| j.copy_from_slice(&jac),
    ))
}

fn rotation_block(rate: f64) -> [f64; 4] {
    [0.0, -rate, rate, 0.0]
}

fn clamped_cosh(u: f64) -> (f64, f64) {
    if u.abs() < CLAMP {
        (u.cosh(), u.sinh())
    } else {
        (u.clamp(-CLAMP, CLAMP).cosh(), 0.0)
    }
}

fn cosh_integrand() -> Arc<AnalyticMap> {
    AnalyticMap::new(
        "cosh_clamped",
        2,
        2,
        |x, o| {
            for i in 0..2 {
                o[i] = clamped_cosh(x[i]).0;
            }
        },
        |x, j| {
            j.fill(0.0);
            for i in 0..2 {
                j[i * 2 + i] = clamped_cosh(x[i]).1;
            }
        },
    )
}

/// The generator system with kernel scale `gamma`.
pub fn default_system(name: SystemName, gamma: f64) -> Result<IdeSystem> {
    if !gamma.is_finite() {
        return Err(Error::invalid("kernel scale must be finite"));
    }
    let (t0, _) = name.default_window();
    let volterra = IntervalSpec::Volterra { a: t0 };
    match name {
        SystemName::IdeSpiral2d => {
            let kernel = AnalyticKernel::new("spiral_kernel", move |t, s, o| {
                o[0] = gamma * (t - s).cos();
                o[1] = gamma * (2.0 * s).sin();
                o[2] = -gamma * (t - s).sin();
                o[3] = gamma * (2.0 * t).cos();
            });
            IdeSystem::new(
                2,
                2,
                Some(linear("rotation", rotation_block(0.5).to_vec(), 2)),
                Some(IntegralTerm {
                    kernel: Kernel::Analytic(kernel),
                    integrand: Integrand::Analytic(cosh_integrand()),
                    interval: volterra,
                }),
            )
        }
        SystemName::IdeCurves4d => {
            let (r1, r2) = (rotation_block(0.5), rotation_block(0.3));
            let mut a = vec![0.0; 16];
            for (bi, block) in [(0, r1), (2, r2)] {
                for i in 0..2 {
                    for j in 0..2 {
                        a[(bi + i) * 4 + bi + j] = block[i * 2 + j];
                    }
                }
            }
            let kernel = AnalyticKernel::new("curves_kernel", move |t, s, o| {
                o[0] = gamma * (t - s).cos();
                o[1] = gamma * (2.0 * s).sin();
                o[2] = -gamma * (t - s).sin();
                o[3] = gamma * (2.0 * t).cos();
                o[4] = gamma * (2.0 * (t - s)).cos();
                o[5] = -gamma * s.sin();
                o[6] = gamma * (2.0 * (t - s)).sin();
                o[7] = gamma * t.cos();
            });
            let integrand = AnalyticMap::new(
                "cosh_pairs",
                4,
                2,
                |x, o| {
                    o[0] = clamped_cosh(x[0] + x[2]).0;
                    o[1] = clamped_cosh(x[1] + x[3]).0;
                },
                |x, j| {
                    let d0 = clamped_cosh(x[0] + x[2]).1;
                    let d1 = clamped_cosh(x[1] + x[3]).1;
                    j.copy_from_slice(&[d0, 0.0, d0, 0.0, 0.0, d1, 0.0, d1]);
                },
            );
            IdeSystem::new(
                4,
                2,
                Some(linear("rotation_blocks", a, 4)),
                Some(IntegralTerm {
                    kernel: Kernel::Analytic(kernel),
                    integrand: Integrand::Analytic(integrand),
                    interval: volterra,
                }),
            )
        }
        SystemName::OdeSpiral2d => IdeSystem::new(2, 0, Some(linear("damped_rotation", vec![-0.1, -1.0, 1.0, -0.1], 2)), None),
        SystemName::DecompCurves2d => {
            let c = 10.0 * gamma;
            let kernel = AnalyticKernel::new("rotation_kernel", move |t, s, o| {
                let (sn, cs) = (t - s).sin_cos();
                o.copy_from_slice(&[c * cs, -c * sn, c * sn, c * cs]);
            });
            let integrand = AnalyticMap::new(
                "tanh",
                2,
                2,
                |x, o| {
                    o[0] = x[0].tanh();
                    o[1] = x[1].tanh();
                },
                |x, j| {
                    let d = |v: f64| 1.0 - v.tanh().powi(2);
                    j.copy_from_slice(&[d(x[0]), 0.0, 0.0, d(x[1])]);
                },
            );
            IdeSystem::new(
                2,
                2,
                Some(linear("damped_rotation", vec![-0.2, -1.0, 1.0, -0.2], 2)),
                Some(IntegralTerm {
                    kernel: Kernel::Analytic(kernel),
                    integrand: Integrand::Analytic(integrand),
                    interval: volterra,
                }),
            )
        }
    }
}

/// Every generator system at the default kernel scale.
pub fn default_systems() -> Result<Vec<(SystemName, IdeSystem)>> {
    SystemName::ALL
        .into_iter()
        .map(|n| Ok((n, default_system(n, DEFAULT_GAMMA)?)))
        .collect()
}
