use std::sync::atomic::{AtomicU64, Ordering};

use super::graph::Graph;
use super::ops::Primitive;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

enum Origin {
    Leaf,
    Constant,
    Op(Primitive, Vec<usize>),
}

struct Node {
    origin: Origin,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive applications for reverse-mode
/// differentiation. Nodes are stored in evaluation order, so every operand
/// precedes its consumers.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    strict: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            strict: false,
        }
    }

    /// Reject non-finite primitive outputs at record time.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Origin::Leaf, value, true)
    }

    fn push(&mut self, origin: Origin, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            origin,
            value,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape("value was not recorded on this tape".into()));
        }
        Ok(v.index)
    }

    /// Gradient of a scalar output with respect to every leaf.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let idx = self.check(&output)?;
        let value = &self.nodes[idx].value;
        if !value.is_scalar() {
            return Err(Error::Tape(format!(
                "backward needs a scalar output, got shape {:?}",
                value.shape()
            )));
        }
        let seed = Tensor::filled(value.shape(), 1.0);
        self.pullback(idx, seed)
    }

    /// Vector-Jacobian product: pull `cotangent` (shaped like `output`)
    /// back to every leaf.
    pub fn vjp(&self, output: Var, cotangent: Tensor) -> Result<Gradients> {
        let idx = self.check(&output)?;
        if self.nodes[idx].value.shape() != cotangent.shape() {
            return Err(Error::shape(
                "vjp",
                format!(
                    "cotangent {:?} for output {:?}",
                    cotangent.shape(),
                    self.nodes[idx].value.shape()
                ),
            ));
        }
        self.pullback(idx, cotangent)
    }

    fn pullback(&self, output: usize, seed: Tensor) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(output + 1);
        grads.resize_with(output + 1, || None);
        if self.nodes[output].requires_grad {
            grads[output] = Some(seed);
        }
        for i in (0..=output).rev() {
            let node = &self.nodes[i];
            let Origin::Op(prim, inputs) = &node.origin else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let operand_values: Vec<&Tensor> =
                inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let contributions = prim.backward(&operand_values, &node.value, &g, &needs);
            for ((&j, contrib), need) in inputs.iter().zip(contributions).zip(needs) {
                if !need {
                    continue;
                }
                if let Some(c) = contrib {
                    match &mut grads[j] {
                        Some(acc) => acc.add_assign(&c),
                        slot => *slot = Some(c),
                    }
                }
            }
        }
        // Only leaf gradients survive the sweep.
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

impl Graph for Tape {
    type Value = Var;

    fn record(&mut self, primitive: Primitive, inputs: &[&Var]) -> Result<Var> {
        let mut idx = Vec::with_capacity(inputs.len());
        for v in inputs {
            idx.push(self.check(v)?);
        }
        let out = {
            let values: Vec<&Tensor> = idx.iter().map(|&j| &self.nodes[j].value).collect();
            primitive.forward(&values)?
        };
        if self.strict && !out.is_finite() {
            return Err(Error::NonFinite(primitive.name().to_string()));
        }
        let requires_grad = idx.iter().any(|&j| self.nodes[j].requires_grad);
        let origin = if requires_grad {
            Origin::Op(primitive, idx)
        } else {
            Origin::Constant
        };
        Ok(self.push(origin, out, requires_grad))
    }

    fn constant(&mut self, value: Tensor) -> Var {
        self.push(Origin::Constant, value, false)
    }

    fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        assert_eq!(v.tape, self.id, "value was not recorded on this tape");
        &self.nodes[v.index].value
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `leaf`, or `None` when the output does not depend on it.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        if leaf.tape != self.tape {
            return None;
        }
        self.grads.get(leaf.index).and_then(Option::as_ref)
    }

    /// Gradient for `leaf`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, leaf: Var, shape: &[usize]) -> Tensor {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Worst component-wise relative error between the tape gradient of `f`
/// at `x` and central finite differences with step `step`.
///
/// The denominator is `max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get_or_zeros(leaf, x.shape());

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe);
        let o = f(&mut t, v)?;
        Ok(t.value(&o).item())
    };

    let mut worst = 0.0_f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
