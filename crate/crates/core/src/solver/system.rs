use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::{Graph, Gradients, ParamVector, RowFunction, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{DynamicsNet, IntegrandNet, KernelNet, Mlp};

/// Integration limits `(α(t), β(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntervalSpec {
    /// `(a, t)`.
    Volterra { a: f64 },
    /// `(a, b)`, both inside the solve window.
    Fredholm { a: f64, b: f64 },
}

impl IntervalSpec {
    pub fn validate(&self, t0: f64, t1: f64) -> Result<()> {
        match *self {
            IntervalSpec::Volterra { a } if !(a <= t0) => Err(Error::invalid(format!(
                "Volterra lower limit {a} must not exceed t0 = {t0}"
            ))),
            IntervalSpec::Fredholm { a, b } if !(t0 <= a && a <= b && b <= t1) => {
                Err(Error::invalid(format!(
                    "Fredholm limits [{a}, {b}] must be ordered and inside [{t0}, {t1}]"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn limits(&self, t: f64) -> (f64, f64) {
        match *self {
            IntervalSpec::Volterra { a } => (a, t),
            IntervalSpec::Fredholm { a, b } => (a, b),
        }
    }

    /// Same kind of interval under the affine time map `t -> scale * t + shift`.
    pub fn mapped(&self, scale: f64, shift: f64) -> Self {
        match *self {
            IntervalSpec::Volterra { a } => IntervalSpec::Volterra { a: scale * a + shift },
            IntervalSpec::Fredholm { a, b } => IntervalSpec::Fredholm {
                a: scale * a + shift,
                b: scale * b + shift,
            },
        }
    }
}

type MapFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A closed-form row map built from a value closure and a Jacobian closure.
pub struct AnalyticMap {
    name: String,
    input_dim: usize,
    output_dim: usize,
    value: Box<MapFn>,
    jacobian: Box<MapFn>,
}

impl AnalyticMap {
    pub fn new(
        name: impl Into<String>,
        input_dim: usize,
        output_dim: usize,
        value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Arc<Self> {
        Arc::new(AnalyticMap {
            name: name.into(),
            input_dim,
            output_dim,
            value: Box::new(value),
            jacobian: Box::new(jacobian),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for AnalyticMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnalyticMap({}: {} -> {})", self.name, self.input_dim, self.output_dim)
    }
}

impl RowFunction for AnalyticMap {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out)
    }
    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        (self.jacobian)(x, jac)
    }
}

type KernelFn = dyn Fn(f64, f64, &mut [f64]) + Send + Sync;

/// Closed-form `K(t, s)` writing a row-major `n x m` matrix.
#[derive(Clone)]
pub struct AnalyticKernel {
    pub name: String,
    f: Arc<KernelFn>,
}

impl AnalyticKernel {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        AnalyticKernel {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, t: f64, s: f64, out: &mut [f64]) {
        (self.f)(t, s, out)
    }
}

impl fmt::Debug for AnalyticKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnalyticKernel({})", self.name)
    }
}

/// Local dynamics `f(t, y)`; analytic maps take the row `[y | t]`.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Net(DynamicsNet),
    Analytic(Arc<AnalyticMap>),
}

#[derive(Debug, Clone)]
pub enum Kernel {
    Net(KernelNet),
    Analytic(AnalyticKernel),
}

#[derive(Debug, Clone)]
pub enum Integrand {
    Net(IntegrandNet),
    Analytic(Arc<AnalyticMap>),
}

/// `∫_{α(t)}^{β(t)} K(t, s) F(y(s)) ds`.
#[derive(Debug, Clone)]
pub struct IntegralTerm {
    pub kernel: Kernel,
    pub integrand: Integrand,
    pub interval: IntervalSpec,
}

/// `dy/dt = f(t, y) + ∫ K(t, s) F(y(s)) ds`; a missing integral term means `K ≡ 0`.
#[derive(Debug, Clone)]
pub struct IdeSystem {
    pub dynamics: Option<Dynamics>,
    pub integral: Option<IntegralTerm>,
    n: usize,
    m: usize,
}

/// Per-component parameter handles on a graph, in `IdeSystem::params` order.
#[derive(Debug, Clone)]
pub struct BoundSystem<V> {
    pub dynamics: Vec<V>,
    pub kernel: Vec<V>,
    pub integrand: Vec<V>,
}

impl IdeSystem {
    pub fn new(n: usize, m: usize, dynamics: Option<Dynamics>, integral: Option<IntegralTerm>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        if let Some(d) = &dynamics {
            let (i, o) = match d {
                Dynamics::Net(net) => (net.mlp.spec().input_dim, net.mlp.spec().output_dim),
                Dynamics::Analytic(f) => (f.input_dim(), f.output_dim()),
            };
            if i != n + 1 || o != n {
                return Err(Error::invalid(format!(
                    "dynamics maps {i} -> {o}, expected {} -> {n}",
                    n + 1
                )));
            }
        }
        if let Some(term) = &integral {
            if m == 0 {
                return Err(Error::invalid("latent dimension must be positive"));
            }
            if let Kernel::Net(k) = &term.kernel {
                if k.dims() != (n, m) {
                    return Err(Error::invalid(format!(
                        "kernel is {:?}, expected ({n}, {m})",
                        k.dims()
                    )));
                }
            }
            let (i, o) = match &term.integrand {
                Integrand::Net(net) => (net.state_dim(), net.latent_dim()),
                Integrand::Analytic(f) => (f.input_dim(), f.output_dim()),
            };
            if i != n || o != m {
                return Err(Error::invalid(format!(
                    "integrand maps {i} -> {o}, expected {n} -> {m}"
                )));
            }
        }
        Ok(IdeSystem { dynamics, integral, n, m })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn latent_dim(&self) -> usize {
        self.m
    }

    fn nets(&self) -> [(&'static str, Option<&Mlp>); 3] {
        let f = match &self.dynamics {
            Some(Dynamics::Net(d)) => Some(&d.mlp),
            _ => None,
        };
        let (k, i) = match &self.integral {
            Some(term) => (
                match &term.kernel {
                    Kernel::Net(k) => Some(&k.mlp),
                    _ => None,
                },
                match &term.integrand {
                    Integrand::Net(i) => Some(&i.mlp),
                    _ => None,
                },
            ),
            None => (None, None),
        };
        [("f", f), ("kernel", k), ("integrand", i)]
    }

    fn nets_mut(&mut self) -> [Option<&mut Mlp>; 3] {
        let f = match &mut self.dynamics {
            Some(Dynamics::Net(d)) => Some(&mut d.mlp),
            _ => None,
        };
        let (k, i) = match &mut self.integral {
            Some(term) => (
                match &mut term.kernel {
                    Kernel::Net(k) => Some(&mut k.mlp),
                    _ => None,
                },
                match &mut term.integrand {
                    Integrand::Net(i) => Some(&mut i.mlp),
                    _ => None,
                },
            ),
            None => (None, None),
        };
        [f, k, i]
    }

    /// Trainable parameters, segments prefixed `f.`, `kernel.`, `integrand.`.
    pub fn params(&self) -> ParamVector {
        let mut p = ParamVector::empty();
        for (name, net) in self.nets() {
            if let Some(net) = net {
                p.extend_prefixed(name, net.params());
            }
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().filter_map(|(_, n)| n.map(|n| n.param_count())).sum()
    }

    /// Parameter counts per component `(f, kernel, integrand)`.
    pub fn param_split(&self) -> [usize; 3] {
        let c = self.nets();
        [0, 1, 2].map(|i| c[i].1.map_or(0, |n| n.param_count()))
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "system has {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        for net in self.nets_mut().into_iter().flatten() {
            let len = net.param_count();
            net.set_values(&values[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }

    pub fn with_params(&self, values: &[f64]) -> Result<Self> {
        let mut s = self.clone();
        s.set_params(values)?;
        Ok(s)
    }

    pub fn bind<G: Graph>(&self, g: &mut G, trainable: bool) -> BoundSystem<G::Value> {
        let [f, k, i] = self.nets();
        BoundSystem {
            dynamics: f.1.map_or_else(Vec::new, |n| n.bind(g, trainable)),
            kernel: k.1.map_or_else(Vec::new, |n| n.bind(g, trainable)),
            integrand: i.1.map_or_else(Vec::new, |n| n.bind(g, trainable)),
        }
    }

    /// Flatten tape gradients for a `bind(.., true)` into `params()` layout.
    pub fn collect_grad(&self, grads: &Gradients, bound: &BoundSystem<Var>) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        let layout = self.params();
        for v in bound.dynamics.iter().chain(&bound.kernel).chain(&bound.integrand) {
            match grads.get(*v) {
                Some(t) => values.extend_from_slice(t.data()),
                None => {
                    let start = values.len();
                    let seg = layout
                        .segments()
                        .iter()
                        .find(|s| s.offset == start)
                        .expect("segment layout");
                    values.extend(std::iter::repeat_n(0.0, seg.len()));
                }
            }
        }
        layout.with_values(values).expect("layout")
    }

    /// `f(t, y)` on a `[rows, n]` state batch with per-row times `[rows, 1]`.
    pub fn dynamics_forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundSystem<G::Value>,
        t: &G::Value,
        y: &G::Value,
    ) -> Result<Option<G::Value>> {
        match &self.dynamics {
            None => Ok(None),
            Some(Dynamics::Net(net)) => Ok(Some(net.forward(g, &bound.dynamics, t, y)?)),
            Some(Dynamics::Analytic(f)) => {
                let x = g.concat(&[y, t], 1)?;
                let f: Arc<dyn RowFunction> = f.clone();
                Ok(Some(g.row_map(&f, &x)?))
            }
        }
    }

    /// `F(y)` on a `[rows, n]` batch. Errors when there is no integral term.
    pub fn integrand_forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundSystem<G::Value>,
        y: &G::Value,
    ) -> Result<G::Value> {
        match self.integral.as_ref().map(|t| &t.integrand) {
            None => Err(Error::invalid("system has no integral term")),
            Some(Integrand::Net(net)) => net.forward(g, &bound.integrand, y),
            Some(Integrand::Analytic(f)) => {
                let f: Arc<dyn RowFunction> = f.clone();
                g.row_map(&f, y)
            }
        }
    }

    /// `K` at rows `(t, s)` of `pairs`, as `[rows, n*m]`.
    pub fn kernel_forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &BoundSystem<G::Value>,
        pairs: &Tensor,
    ) -> Result<G::Value> {
        match self.integral.as_ref().map(|t| &t.kernel) {
            None => Err(Error::invalid("system has no integral term")),
            Some(Kernel::Net(net)) => {
                let x = g.constant(pairs.clone());
                net.forward(g, &bound.kernel, &x)
            }
            Some(Kernel::Analytic(k)) => {
                let nm = self.n * self.m;
                let rows = pairs.rows();
                let mut data = vec![0.0; rows * nm];
                for (r, out) in data.chunks_mut(nm).enumerate() {
                    let p = pairs.row_slice(r);
                    k.eval(p[0], p[1], out);
                }
                Ok(g.constant(Tensor::matrix(rows, nm, data)?))
            }
        }
    }

    /// `K(t, s)` as an `[n, m]` matrix, evaluated eagerly.
    pub fn kernel_matrix(&self, t: f64, s: f64) -> Result<Tensor> {
        let mut g = crate::ad::Eager::new();
        let bound = self.bind(&mut g, false);
        let k = self.kernel_forward(&mut g, &bound, &Tensor::row(&[t, s]))?;
        k.reshaped(&[self.n, self.m])
    }

    pub fn interval(&self) -> Option<IntervalSpec> {
        self.integral.as_ref().map(|t| t.interval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Eager, Tape};
    use crate::nets::MlpSpec;

    fn small_system() -> IdeSystem {
        let f = DynamicsNet::new(Mlp::init(DynamicsNet::spec_for(2, &[3]), 1).unwrap()).unwrap();
        let k = KernelNet::new(Mlp::init(KernelNet::spec_for(2, 2, &[3]), 2).unwrap(), 2, 2).unwrap();
        let i = IntegrandNet::new(Mlp::init(MlpSpec::new(2, &[3], 2), 3).unwrap()).unwrap();
        IdeSystem::new(
            2,
            2,
            Some(Dynamics::Net(f)),
            Some(IntegralTerm {
                kernel: Kernel::Net(k),
                integrand: Integrand::Net(i),
                interval: IntervalSpec::Volterra { a: 0.0 },
            }),
        )
        .unwrap()
    }

    #[test]
    fn params_round_trip_through_set() {
        let s = small_system();
        let p = s.params();
        assert_eq!(p.len(), s.param_count());
        assert_eq!(p.segments()[0].name, "f.layer0.weight");
        let shifted: Vec<f64> = p.values().iter().map(|v| v + 1.0).collect();
        let s2 = s.with_params(&shifted).unwrap();
        assert_eq!(s2.params().values(), &shifted[..]);
        assert!(s.with_params(&shifted[1..]).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = DynamicsNet::new(Mlp::init(DynamicsNet::spec_for(3, &[]), 1).unwrap()).unwrap();
        assert!(IdeSystem::new(2, 1, Some(Dynamics::Net(f)), None).is_err());
    }

    #[test]
    fn collect_grad_zero_fills_unused_components() {
        let s = small_system();
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, true);
        let y = tape.constant(Tensor::row(&[0.1, 0.2]));
        let t = tape.constant(Tensor::row(&[0.3]));
        let out = s.dynamics_forward(&mut tape, &bound, &t, &y).unwrap().unwrap();
        let l = tape.sum(&out).unwrap();
        let grads = tape.backward(l).unwrap();
        let g = s.collect_grad(&grads, &bound);
        let split = s.param_split();
        assert!(g.values()[..split[0]].iter().any(|v| *v != 0.0));
        assert!(g.values()[split[0]..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn analytic_kernel_and_integrand() {
        let k = AnalyticKernel::new("ones", |_, _, out| out.fill(1.0));
        let id = AnalyticMap::new("id", 1, 1, |x, o| o[0] = x[0], |_, j| j[0] = 1.0);
        let s = IdeSystem::new(
            1,
            1,
            None,
            Some(IntegralTerm {
                kernel: Kernel::Analytic(k),
                integrand: Integrand::Analytic(id),
                interval: IntervalSpec::Fredholm { a: 0.0, b: 1.0 },
            }),
        )
        .unwrap();
        assert_eq!(s.param_count(), 0);
        assert_eq!(s.kernel_matrix(0.2, 0.7).unwrap().data(), &[1.0]);
        let mut g = Eager::new();
        let b = s.bind(&mut g, false);
        let y = Tensor::column(&[2.0, -3.0]);
        assert_eq!(s.integrand_forward(&mut g, &b, &y).unwrap().data(), &[2.0, -3.0]);
    }

    #[test]
    fn interval_validation() {
        assert!(IntervalSpec::Volterra { a: 0.5 }.validate(0.0, 1.0).is_err());
        assert!(IntervalSpec::Fredholm { a: 0.0, b: 2.0 }.validate(0.0, 1.0).is_err());
        assert!(IntervalSpec::Fredholm { a: 0.2, b: 0.8 }.validate(0.0, 1.0).is_ok());
    }
}
