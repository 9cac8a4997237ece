use serde::{Deserialize, Serialize};

use crate::ad::{Graph, ParamVector, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// Layer sizes of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "identity")]
    pub final_activation: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Tanh,
            final_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("all layer sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected network with weights stored as `[fan_in, fan_out]`
/// so that a batch of row inputs maps as `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamVector,
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Stream::from_seed(seed);
        let mut params = ParamVector::empty();
        for (i, (fan_in, fan_out)) in spec.layers().into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            params.push(format!("layer{i}.weight"), vec![fan_in, fan_out], &w);
            params.push(format!("layer{i}.bias"), vec![fan_out], &vec![0.0; fan_out]);
        }
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let mut m = Mlp::init(spec, 0)?;
        m.params.values_mut().fill(0.0);
        Ok(m)
    }

    pub fn from_params(spec: MlpSpec, values: Vec<f64>) -> Result<Self> {
        let layout = Mlp::zeros(spec.clone())?.params;
        Ok(Mlp {
            spec,
            params: layout.with_values(values)?,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Register parameters on a graph, as differentiable inputs when
    /// `trainable`, otherwise as constants.
    pub fn bind<G: Graph>(&self, g: &mut G, trainable: bool) -> Vec<G::Value> {
        self.params
            .segments()
            .iter()
            .map(|s| {
                let t = Tensor::new(s.shape.clone(), self.params.values()[s.range()].to_vec())
                    .expect("segment shape");
                if trainable {
                    g.input(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }

    /// Forward pass on a `[rows, input_dim]` batch with parameters bound by [`Mlp::bind`].
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        x: &G::Value,
    ) -> Result<G::Value> {
        let shape = g.value(x).shape();
        if shape.len() != 2 || shape[1] != self.spec.input_dim {
            return Err(Error::shape(
                "mlp",
                format!("input {:?}, expected [rows, {}]", shape, self.spec.input_dim),
            ));
        }
        let layers = self.spec.layers().len();
        let mut h = x.clone();
        for i in 0..layers {
            h = g.matmul(&h, &bound[2 * i])?;
            h = g.add_bias(&h, &bound[2 * i + 1])?;
            let act = if i + 1 < layers {
                self.spec.activation
            } else {
                self.spec.final_activation
            };
            if act == Activation::Tanh {
                h = g.tanh(&h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass without recording.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = crate::ad::Eager::new();
        let bound = self.bind(&mut g, false);
        self.forward(&mut g, &bound, x)
    }

    /// `cotangentᵀ · ∂net/∂input`, row by row.
    pub fn vjp_input(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, &bound, &xv)?;
        if tape.value(&y).shape() != cotangent.shape() {
            return Err(Error::shape(
                "vjp_input",
                format!(
                    "cotangent {:?} for output {:?}",
                    cotangent.shape(),
                    tape.value(&y).shape()
                ),
            ));
        }
        let grads = tape.vjp(y, cotangent.clone())?;
        Ok(grads.get_or_zeros(xv, x.shape()))
    }

    /// `cotangentᵀ · ∂net/∂θ`, summed over rows, in parameter order.
    pub fn vjp_params(&self, x: &Tensor, cotangent: &Tensor) -> Result<ParamVector> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &bound, &xv)?;
        if tape.value(&y).shape() != cotangent.shape() {
            return Err(Error::shape(
                "vjp_params",
                format!(
                    "cotangent {:?} for output {:?}",
                    cotangent.shape(),
                    tape.value(&y).shape()
                ),
            ));
        }
        let grads = tape.vjp(y, cotangent.clone())?;
        self.collect_grad(&grads, &bound)
    }

    /// Gather leaf gradients of bound parameters into a [`ParamVector`].
    pub fn collect_grad(
        &self,
        grads: &crate::ad::Gradients,
        bound: &[crate::ad::Var],
    ) -> Result<ParamVector> {
        let mut values = Vec::with_capacity(self.params.len());
        for (seg, v) in self.params.segments().iter().zip(bound) {
            match grads.get(*v) {
                Some(t) => values.extend_from_slice(t.data()),
                None => values.extend(std::iter::repeat_n(0.0, seg.len())),
            }
        }
        self.params.with_values(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(2, &[8], 2);
        let a = Mlp::init(spec.clone(), 0).unwrap();
        let b = Mlp::init(spec, 0).unwrap();
        assert_eq!(a.params().values(), b.params().values());
    }

    #[test]
    fn param_count_formula() {
        let spec = MlpSpec::new(4, &[8], 2);
        assert_eq!(spec.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(spec.param_count(), 58);
        assert_eq!(Mlp::init(spec, 1).unwrap().param_count(), 58);
    }

    #[test]
    fn biases_start_at_zero_and_weights_are_bounded() {
        let spec = MlpSpec::new(3, &[5, 4], 2);
        let net = Mlp::init(spec, 9).unwrap();
        for seg in net.params().segments() {
            let vals = &net.params().values()[seg.range()];
            if seg.name.ends_with("bias") {
                assert!(vals.iter().all(|&v| v == 0.0));
            } else {
                let bound = 1.0 / (seg.shape[0] as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn rejects_zero_width() {
        assert!(Mlp::init(MlpSpec::new(2, &[0], 1), 0).is_err());
        assert!(Mlp::init(MlpSpec::new(0, &[], 1), 0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(3, &[4, 4], 2)).unwrap();
        let y = net.eval(&Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_net_is_wx_plus_b() {
        let net = Mlp::from_params(MlpSpec::new(2, &[], 2), vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        let y = net.eval(&Tensor::row(&[1.0, 1.0])).unwrap();
        // [1, 1] · [[1, 2], [3, 4]] + [0.5, -0.5]
        assert_eq!(y.data(), &[4.5, 5.5]);
    }

    #[test]
    fn input_dimension_checked() {
        let net = Mlp::zeros(MlpSpec::new(3, &[], 1)).unwrap();
        assert!(net.eval(&Tensor::row(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn vjp_of_affine_net() {
        // W stored [in, out]; output = x W + b, so a^T J_x = W a (as a row).
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // [3, 2]
        let net = Mlp::from_params(MlpSpec::new(3, &[], 2), [w.clone(), vec![0.0, 0.0]].concat()).unwrap();
        let x = Tensor::row(&[0.2, -0.1, 0.7]);
        let a = Tensor::row(&[1.5, -2.0]);
        let gx = net.vjp_input(&x, &a).unwrap();
        let expect: Vec<f64> = (0..3).map(|i| w[2 * i] * 1.5 + w[2 * i + 1] * -2.0).collect();
        assert_eq!(gx.data(), expect.as_slice());

        let gp = net.vjp_params(&x, &a).unwrap();
        let wg = gp.segment("layer0.weight").unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(wg[i * 2 + j], x.data()[i] * a.data()[j]);
            }
        }
        assert_eq!(gp.segment("layer0.bias").unwrap(), a.data());
    }

    #[test]
    fn vjp_zero_cotangent_and_zero_input() {
        let net = Mlp::init(MlpSpec::new(2, &[3], 2), 4).unwrap();
        let x = Tensor::row(&[0.3, 0.4]);
        let g = net.vjp_input(&x, &Tensor::row(&[0.0, 0.0])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        let affine = Mlp::init(MlpSpec::new(2, &[], 2), 4).unwrap();
        let a = Tensor::row(&[0.7, -1.0]);
        let gp = affine.vjp_params(&Tensor::row(&[0.0, 0.0]), &a).unwrap();
        assert!(gp.segment("layer0.weight").unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(gp.segment("layer0.bias").unwrap(), a.data());
    }

    #[test]
    fn vjp_shape_mismatch() {
        let net = Mlp::init(MlpSpec::new(2, &[3], 2), 4).unwrap();
        assert!(net.vjp_input(&Tensor::row(&[0.0, 0.0]), &Tensor::row(&[1.0])).is_err());
        assert!(net.vjp_params(&Tensor::row(&[0.0, 0.0]), &Tensor::row(&[1.0])).is_err());
    }
}
