//! Finite-difference and algebraic properties of every primitive.

use std::sync::Arc;

use super::*;
use crate::error::Result;
use crate::rng::Stream;

const TRIALS: usize = 100;

fn random(s: &mut Stream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| s.uniform(-2.0, 2.0)).collect()).unwrap()
}

/// Contract a primitive's output with a fixed random weight so that every
/// output component contributes to the scalar being checked.
fn project(t: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let n = w.numel();
    let w = t.constant(w.clone().reshaped(&[1, n])?);
    let flat = t.reshape(&y, &[1, n])?;
    let p = t.mul(&flat, &w)?;
    t.sum(&p)
}

/// Check a multi-input primitive against central differences, one input at a time.
fn fd_check(
    seed: u64,
    shapes: &[Vec<usize>],
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let mut s = Stream::from_seed(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|sh| random(&mut s, sh)).collect();
    let out_shape = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let y = build(&mut t, &vars).unwrap();
        t.value(&y).shape().to_vec()
    };
    let w = random(&mut s, &out_shape);
    let mut worst = 0.0_f64;
    for which in 0..inputs.len() {
        let err = grad_check(
            |t, x| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == which { x } else { t.constant(v.clone()) })
                    .collect();
                let y = build(t, &vars)?;
                project(t, y, &w)
            },
            &inputs[which],
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

macro_rules! primitive_fd_test {
    ($name:ident, $shapes:expr, $build:expr) => {
        #[test]
        fn $name() {
            let mut worst = 0.0_f64;
            for trial in 0..TRIALS as u64 {
                worst = worst.max(fd_check(trial, &$shapes, $build));
            }
            assert!(worst <= 1e-6, "worst relative error {worst:e}");
        }
    };
}

primitive_fd_test!(fd_matmul, [vec![3, 4], vec![4, 2]], |t, v| t.matmul(&v[0], &v[1]));
primitive_fd_test!(fd_add, [vec![2, 3], vec![2, 3]], |t, v| t.add(&v[0], &v[1]));
primitive_fd_test!(fd_sub, [vec![2, 3], vec![2, 3]], |t, v| t.sub(&v[0], &v[1]));
primitive_fd_test!(fd_mul, [vec![2, 3], vec![2, 3]], |t, v| t.mul(&v[0], &v[1]));
primitive_fd_test!(fd_scale, [vec![2, 3]], |t, v| t.scale(&v[0], -1.7));
primitive_fd_test!(fd_tanh, [vec![3, 3]], |t, v| t.tanh(&v[0]));
primitive_fd_test!(fd_cosh, [vec![3, 3]], |t, v| t.cosh(&v[0]));
primitive_fd_test!(fd_sinh, [vec![3, 3]], |t, v| t.sinh(&v[0]));
primitive_fd_test!(fd_clamp, [vec![3, 3]], |t, v| {
    // Keep probes away from the kinks, where the derivative is undefined.
    let shifted = t.scale(&v[0], 1.0)?;
    t.clamp(&shifted, -10.0, 10.0)
});
primitive_fd_test!(fd_sum, [vec![2, 5]], |t, v| {
    let s = t.sum(&v[0])?;
    t.reshape(&s, &[1, 1])
});
primitive_fd_test!(fd_weighted_sum, [vec![2, 2], vec![2, 2], vec![2, 2]], |t, v| {
    t.weighted_sum(&[0.5, -1.25, 2.0], &[&v[0], &v[1], &v[2]])
});
primitive_fd_test!(fd_reshape, [vec![2, 6]], |t, v| {
    let r = t.reshape(&v[0], &[3, 4])?;
    t.tanh(&r)
});
primitive_fd_test!(fd_concat_rows, [vec![2, 3], vec![1, 3]], |t, v| t.concat(&[&v[0], &v[1]], 0));
primitive_fd_test!(fd_concat_cols, [vec![2, 3], vec![2, 1]], |t, v| t.concat(&[&v[0], &v[1]], 1));
primitive_fd_test!(fd_slice, [vec![4, 3]], |t, v| {
    let a = t.slice(&v[0], 0, 1, 3)?;
    t.slice(&a, 1, 0, 2)
});
primitive_fd_test!(fd_add_bias, [vec![4, 3], vec![3]], |t, v| t.add_bias(&v[0], &v[1]));
primitive_fd_test!(fd_sparse_matmul, [vec![4, 2]], |t, v| {
    let a = Arc::new(
        SparseMatrix::from_rows(4, &[vec![(0, 0.25), (1, 0.75)], vec![(3, 1.0)], vec![]]).unwrap(),
    );
    t.sparse_matmul(&a, &v[0])
});
primitive_fd_test!(fd_pair_contract, [vec![4, 6], vec![2, 6]], |t, v| {
    // n = 2, m = 3, batch = 2, three targets.
    let plan = Arc::new(PairContraction {
        targets: 3,
        nodes: 2,
        n: 2,
        m: 3,
        pairs: vec![(0, 0, 0.3), (0, 1, 0.7), (2, 1, -1.1), (1, 0, 0.9)],
    });
    t.pair_contract(&plan, &v[0], &v[1])
});

/// `(x0, x1, x2) -> (x0 * sin x1, x2^2 + x0)`.
#[derive(Debug)]
struct Polar;

impl RowFunction for Polar {
    fn input_dim(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[1].sin();
        out[1] = x[2] * x[2] + x[0];
    }
    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        jac.copy_from_slice(&[x[1].sin(), x[0] * x[1].cos(), 0.0, 1.0, 0.0, 2.0 * x[2]]);
    }
}

primitive_fd_test!(fd_row_map, [vec![4, 3]], |t, v| {
    let f: Arc<dyn RowFunction> = Arc::new(Polar);
    t.row_map(&f, &v[0])
});

fn mlp_like(t: &mut Tape, x: Var, ws: &[Tensor]) -> Result<Var> {
    let mut h = x;
    for (i, w) in ws.iter().enumerate() {
        let wv = t.constant(w.clone());
        h = t.matmul(&h, &wv)?;
        if i + 1 < ws.len() {
            h = t.tanh(&h)?;
        }
    }
    t.sum(&h)
}

#[test]
fn composed_depth_three_network() {
    let mut s = Stream::from_seed(11);
    let ws = vec![random(&mut s, &[3, 5]), random(&mut s, &[5, 4]), random(&mut s, &[4, 2])];
    let x = random(&mut s, &[2, 3]);
    let err = grad_check(|t, x| mlp_like(t, x, &ws), &x, 1e-5).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn matmul_sum_against_central_differences() {
    let mut s = Stream::from_seed(5);
    let w = random(&mut s, &[3, 3]);
    let x = random(&mut s, &[3, 1]);
    let err = grad_check(
        |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul(&wv, &x)?;
            t.sum(&y)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn backward_is_linear_in_the_seed() {
    let mut s = Stream::from_seed(9);
    let x0 = random(&mut s, &[2, 3]);
    let mut t = Tape::new();
    let x = t.leaf(x0);
    let y = t.tanh(&x).unwrap();
    let y = t.cosh(&y).unwrap();
    let l = t.sum(&y).unwrap();
    let scaled = t.scale(&l, 3.5).unwrap();
    let g1 = t.backward(l).unwrap();
    let g2 = t.backward(scaled).unwrap();
    for (a, b) in g1.get(x).unwrap().data().iter().zip(g2.get(x).unwrap().data()) {
        assert!((3.5 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }
}

#[test]
fn replaying_a_tape_is_bit_identical() {
    let mut s = Stream::from_seed(10);
    let x0 = random(&mut s, &[3, 3]);
    let mut t = Tape::new();
    let x = t.leaf(x0);
    let y = t.matmul(&x, &x).unwrap();
    let y = t.sinh(&y).unwrap();
    let l = t.sum(&y).unwrap();
    let a = t.backward(l).unwrap();
    let b = t.backward(l).unwrap();
    let bits = |g: &Gradients| -> Vec<u64> {
        g.get(x).unwrap().data().iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn fan_out_equals_sum_of_branches() {
    let mut s = Stream::from_seed(12);
    let x0 = random(&mut s, &[1, 4]);
    let branch = |which: u8| -> Tensor {
        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let a = t.tanh(&x).unwrap();
        let a = t.sum(&a).unwrap();
        let b = t.sinh(&x).unwrap();
        let b = t.sum(&b).unwrap();
        let l = match which {
            0 => a,
            1 => b,
            _ => t.add(&a, &b).unwrap(),
        };
        t.backward(l).unwrap().get(x).unwrap().clone()
    };
    let (a, b, both) = (branch(0), branch(1), branch(2));
    for i in 0..4 {
        assert!((a.data()[i] + b.data()[i] - both.data()[i]).abs() < 1e-15);
    }
}

#[test]
fn unused_leaf_has_no_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row(&[1.0]));
    let z = t.leaf(Tensor::row(&[2.0]));
    let l = t.sum(&x).unwrap();
    let g = t.backward(l).unwrap();
    assert!(g.get(z).is_none());
    assert_eq!(g.get_or_zeros(z, &[1, 1]).data(), &[0.0]);
}

#[test]
fn vjp_checks_cotangent_shape() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row(&[1.0, 2.0]));
    let y = t.tanh(&x).unwrap();
    assert!(t.vjp(y, Tensor::row(&[1.0])).is_err());
    let g = t.vjp(y, Tensor::row(&[1.0, 0.0])).unwrap();
    let d = g.get(x).unwrap().data();
    assert!((d[0] - (1.0 - 1f64.tanh().powi(2))).abs() < 1e-15);
    assert_eq!(d[1], 0.0);
}
