use serde::{Deserialize, Serialize};

use crate::ad::Graph;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

/// One-dimensional integration rule over `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureRule {
    GaussLegendre { nodes: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule::GaussLegendre { nodes: 32 }
    }
}

impl QuadratureRule {
    pub fn validate(&self) -> Result<()> {
        let count = match self {
            QuadratureRule::GaussLegendre { nodes } => *nodes,
            QuadratureRule::MonteCarlo { samples, .. } => *samples,
        };
        if count == 0 {
            return Err(Error::invalid("quadrature needs at least one node"));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, QuadratureRule::GaussLegendre { .. })
    }

    /// Nodes and weights on `[a, b]` (first draw for Monte-Carlo rules).
    pub fn nodes_and_weights(&self, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.nodes_and_weights_indexed(a, b, 0)
    }

    /// Nodes and weights on `[a, b]`; Monte-Carlo draws depend on
    /// `(seed, a, b, call_index)` only.
    pub fn nodes_and_weights_indexed(
        &self,
        a: f64,
        b: f64,
        call_index: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        if a > b || !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid(format!("bad integration interval [{a}, {b}]")));
        }
        if a == b {
            return Ok((Vec::new(), Vec::new()));
        }
        match *self {
            QuadratureRule::GaussLegendre { nodes } => {
                let reference = gauss_legendre(nodes);
                Ok(map_reference(&reference, a, b))
            }
            QuadratureRule::MonteCarlo { samples, seed } => {
                let s = derive_seed(
                    seed,
                    &[
                        "quadrature",
                        &a.to_bits().to_string(),
                        &b.to_bits().to_string(),
                        &call_index.to_string(),
                    ],
                );
                let mut rng = Stream::from_seed(s);
                let nodes = (0..samples).map(|_| rng.uniform(a, b)).collect();
                Ok((nodes, vec![(b - a) / samples as f64; samples]))
            }
        }
    }
}

/// Reference rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Affinely map a reference rule onto `[a, b]`.
pub fn map_reference(rule: &ReferenceRule, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes = rule.nodes.iter().map(|x| mid + half * x).collect();
    let weights = rule.weights.iter().map(|w| half * w).collect();
    (nodes, weights)
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`, by Newton
/// iteration on the three-term Legendre recurrence.
pub fn gauss_legendre(n: usize) -> ReferenceRule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    ReferenceRule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// `∫_a^b fn(s) ds` as a recorded weighted sum of `fn` at the rule's nodes.
pub fn integrate<G, F>(
    g: &mut G,
    rule: &QuadratureRule,
    a: f64,
    b: f64,
    mut f: F,
) -> Result<Option<G::Value>>
where
    G: Graph,
    F: FnMut(&mut G, f64) -> Result<G::Value>,
{
    let (nodes, weights) = rule.nodes_and_weights(a, b)?;
    if nodes.is_empty() {
        return Ok(None);
    }
    let mut values = Vec::with_capacity(nodes.len());
    for &s in &nodes {
        values.push(f(g, s)?);
    }
    let refs: Vec<&G::Value> = values.iter().collect();
    Ok(Some(g.weighted_sum(&weights, &refs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Eager, Tensor};

    fn quad(rule: &QuadratureRule, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (x, w) = rule.nodes_and_weights(a, b).unwrap();
        x.iter().zip(&w).map(|(&x, &w)| w * f(x)).sum()
    }

    #[test]
    fn two_point_rule() {
        let r = gauss_legendre(2);
        let x = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0] + x).abs() < 1e-15 && (r.nodes[1] - x).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-15 && (r.weights[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_length() {
        for n in [1, 2, 3, 7, 16, 32, 64] {
            let (_, w) = QuadratureRule::GaussLegendre { nodes: n }.nodes_and_weights(-0.5, 2.0).unwrap();
            assert!((w.iter().sum::<f64>() - 2.5).abs() < 1e-13, "n = {n}");
        }
        let (_, w) = QuadratureRule::MonteCarlo { samples: 1000, seed: 4 }.nodes_and_weights(0.0, 2.0).unwrap();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_exact_with_two_nodes() {
        let v = quad(&QuadratureRule::GaussLegendre { nodes: 2 }, 0.0, 1.0, |s| s.powi(3));
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sine_with_sixteen_nodes() {
        let v = quad(&QuadratureRule::GaussLegendre { nodes: 16 }, 0.0, std::f64::consts::PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn degree_two_n_minus_one_exactness() {
        for n in 1..=20usize {
            let rule = QuadratureRule::GaussLegendre { nodes: n };
            for deg in 0..(2 * n) {
                let (a, b) = (-0.3_f64, 1.7_f64);
                let exact = (b.powi(deg as i32 + 1) - a.powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                let v = quad(&rule, a, b, |s| s.powi(deg as i32));
                assert!(
                    (v - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                    "n = {n}, degree {deg}: {v} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn degenerate_and_reversed_intervals() {
        let r = QuadratureRule::default();
        assert!(r.nodes_and_weights(1.0, 1.0).unwrap().0.is_empty());
        assert!(r.nodes_and_weights(1.0, 0.0).is_err());
        assert!(QuadratureRule::GaussLegendre { nodes: 0 }.nodes_and_weights(0.0, 1.0).is_err());
        let mut g = Eager::new();
        let v = integrate(&mut g, &r, 2.0, 2.0, |_, _| Ok(Tensor::scalar(1.0))).unwrap();
        assert!(v.is_none());
    }

    #[test]
    fn monte_carlo_constant_and_reproducible() {
        for n in [1, 10, 1000] {
            let rule = QuadratureRule::MonteCarlo { samples: n, seed: 3 };
            assert!((quad(&rule, 0.0, 1.0, |_| 1.0) - 1.0).abs() < 1e-12);
        }
        let rule = QuadratureRule::MonteCarlo { samples: 50, seed: 3 };
        let a = rule.nodes_and_weights_indexed(0.0, 1.0, 5).unwrap();
        let b = rule.nodes_and_weights_indexed(0.0, 1.0, 5).unwrap();
        let c = rule.nodes_and_weights_indexed(0.0, 1.0, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn integrate_is_linear() {
        let rule = QuadratureRule::GaussLegendre { nodes: 8 };
        let mut g = Eager::new();
        let f = |s: f64| (2.0 * s).sin();
        let h = |s: f64| s * s - 1.0;
        let mut run = |c1: f64, c2: f64| {
            integrate(&mut g, &rule, 0.0, 1.3, |_, s| Ok(Tensor::scalar(c1 * f(s) + c2 * h(s))))
                .unwrap()
                .unwrap()
                .item()
        };
        let (a, b, c) = (run(1.0, 0.0), run(0.0, 1.0), run(2.5, -0.75));
        assert!((c - (2.5 * a - 0.75 * b)).abs() < 1e-12);
    }
}
