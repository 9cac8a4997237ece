use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DynamicsNet, IntegrandNet, KernelNet, Mlp, MlpSpec};
use crate::rng::derive_seed;
use crate::solver::{Dynamics, IdeSystem, Integrand, IntegralTerm, IntervalSpec, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nide,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// `[0, t]` in normalized time.
    #[default]
    Volterra,
    /// `[0, 1]` in normalized time.
    Fredholm,
}

impl IntervalKind {
    pub fn normalized(self) -> IntervalSpec {
        match self {
            IntervalKind::Volterra => IntervalSpec::Volterra { a: 0.0 },
            IntervalKind::Fredholm => IntervalSpec::Fredholm { a: 0.0, b: 1.0 },
        }
    }
}

/// Architecture of a learnable system in normalized time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub state_dim: usize,
    /// Integrand output width `m`; unused by `Node`.
    #[serde(default)]
    pub latent_dim: usize,
    /// Hidden widths of `f`; `None` drops the local term.
    #[serde(default)]
    pub f_hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub kernel_hidden: Vec<usize>,
    #[serde(default)]
    pub integrand_hidden: Vec<usize>,
    #[serde(default)]
    pub interval: IntervalKind,
    /// Multiplies the output layers of `f` and `K` at initialization.
    #[serde(default = "one")]
    pub output_init_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn nide(n: usize, m: usize, f_hidden: &[usize], kernel_hidden: &[usize], integrand_hidden: &[usize]) -> Self {
        ModelSpec {
            kind: ModelKind::Nide,
            state_dim: n,
            latent_dim: m,
            f_hidden: Some(f_hidden.to_vec()),
            kernel_hidden: kernel_hidden.to_vec(),
            integrand_hidden: integrand_hidden.to_vec(),
            interval: IntervalKind::Volterra,
            output_init_scale: 1.0,
        }
    }

    pub fn node(n: usize, f_hidden: &[usize]) -> Self {
        ModelSpec {
            kind: ModelKind::Node,
            state_dim: n,
            latent_dim: 0,
            f_hidden: Some(f_hidden.to_vec()),
            kernel_hidden: Vec::new(),
            integrand_hidden: Vec::new(),
            interval: IntervalKind::Volterra,
            output_init_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        match self.kind {
            ModelKind::Nide if self.latent_dim == 0 => Err(Error::invalid("a NIDE needs a positive latent dimension")),
            ModelKind::Node if self.f_hidden.is_none() => Err(Error::invalid("a NODE needs a local term")),
            _ if !(self.output_init_scale.is_finite()) => Err(Error::invalid("output_init_scale must be finite")),
            _ => Ok(()),
        }
    }

    pub fn f_spec(&self) -> Option<MlpSpec> {
        self.f_hidden.as_ref().map(|h| DynamicsNet::spec_for(self.state_dim, h))
    }

    pub fn kernel_spec(&self) -> Option<MlpSpec> {
        (self.kind == ModelKind::Nide).then(|| KernelNet::spec_for(self.state_dim, self.latent_dim, &self.kernel_hidden))
    }

    pub fn integrand_spec(&self) -> Option<MlpSpec> {
        (self.kind == ModelKind::Nide).then(|| IntegrandNet::spec_for(self.state_dim, self.latent_dim, &self.integrand_hidden))
    }

    pub fn param_count(&self) -> usize {
        [self.f_spec(), self.kernel_spec(), self.integrand_spec()]
            .iter()
            .flatten()
            .map(MlpSpec::param_count)
            .sum()
    }

    /// Freshly initialized system; each net draws from its own sub-stream.
    pub fn build(&self, seed: u64) -> Result<IdeSystem> {
        self.validate()?;
        let init = |spec: MlpSpec, label: &str, scale: f64| -> Result<Mlp> {
            let mut mlp = Mlp::init(spec, derive_seed(seed, &["init", label]))?;
            if scale != 1.0 {
                let last = mlp.spec().layers().len() - 1;
                let p = mlp.params().clone();
                let mut v = p.values().to_vec();
                for s in p.segments().iter().filter(|s| s.name.starts_with(&format!("layer{last}."))) {
                    for x in &mut v[s.range()] {
                        *x *= scale;
                    }
                }
                mlp.set_values(&v)?;
            }
            Ok(mlp)
        };
        let dynamics = match self.f_spec() {
            Some(spec) => Some(Dynamics::Net(DynamicsNet::new(init(spec, "f", self.output_init_scale)?)?)),
            None => None,
        };
        let integral = match (self.kernel_spec(), self.integrand_spec()) {
            (Some(k), Some(i)) => Some(IntegralTerm {
                kernel: Kernel::Net(KernelNet::new(
                    init(k, "kernel", self.output_init_scale)?,
                    self.state_dim,
                    self.latent_dim,
                )?),
                integrand: Integrand::Net(IntegrandNet::new(init(i, "integrand", 1.0)?)?),
                interval: self.interval.normalized(),
            }),
            _ => None,
        };
        let m = if integral.is_some() { self.latent_dim } else { 0 };
        IdeSystem::new(self.state_dim, m, dynamics, integral)
    }
}

/// A parameter-matched NODE template and how close the match is.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub spec: ModelSpec,
    pub target: usize,
    pub count: usize,
    /// Set when no width lands within 2% of the target.
    pub warning: Option<String>,
}

impl Baseline {
    pub fn relative_gap(&self) -> f64 {
        (self.count as f64 - self.target as f64).abs() / self.target as f64
    }
}

/// NODE with `K ≡ 0` whose `f` hidden layers are widened until the total
/// parameter count is within 2% of the NIDE's.
///
/// Hidden layers scale together from the NIDE's `f` shape; the last one may
/// deviate by up to a factor of two to close the gap.
pub fn make_node_baseline(nide: &ModelSpec) -> Result<Baseline> {
    nide.validate()?;
    let target = nide.param_count();
    let template = nide
        .f_hidden
        .clone()
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| vec![1; nide.kernel_hidden.len().max(1)]);
    let base = template[0] as f64;
    let scaled = |w: usize| -> Vec<usize> {
        template
            .iter()
            .map(|&h| ((h as f64 * w as f64 / base).round() as usize).max(1))
            .collect()
    };
    let widths = |w: usize, last: usize| -> Vec<usize> {
        let mut h = scaled(w);
        *h.last_mut().expect("non-empty") = last;
        h
    };
    let count = |h: &[usize]| ModelSpec::node(nide.state_dim, h).param_count();
    let tolerance = target as f64 * 0.02;
    // (|last - scaled|, gap, hidden) within tolerance, and the largest under budget.
    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    let mut under: Option<(usize, Vec<usize>)> = None;
    for w in 1..=target.max(1) {
        let natural = *scaled(w).last().expect("non-empty");
        let lo = (natural / 2).max(1);
        if count(&widths(w, lo)) > target {
            break;
        }
        for last in lo..=2 * natural {
            let h = widths(w, last);
            let c = count(&h);
            if c <= target && under.as_ref().is_none_or(|(u, _)| c > *u) {
                under = Some((c, h.clone()));
            }
            let gap = c.abs_diff(target);
            if gap as f64 <= tolerance {
                let key = (last.abs_diff(natural), gap);
                if best.as_ref().is_none_or(|(d, g, _)| key < (*d, *g)) {
                    best = Some((key.0, key.1, h));
                }
            }
        }
    }
    let (hidden, warning) = match best {
        Some((_, _, h)) => (h, None),
        None => {
            let h = under.map(|(_, h)| h).unwrap_or_else(|| widths(1, 1));
            let msg = format!(
                "no NODE width lies within 2% of {target} parameters; using {} parameters",
                count(&h)
            );
            (h, Some(msg))
        }
    };
    let mut spec = ModelSpec::node(nide.state_dim, &hidden);
    spec.output_init_scale = nide.output_init_scale;
    spec.interval = nide.interval;
    Ok(Baseline {
        count: spec.param_count(),
        spec,
        target,
        warning,
    })
}
