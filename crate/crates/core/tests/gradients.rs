//! Tape gradients against central differences, one primitive at a time.

mod common;

use std::rc::Rc;

use common::{rand_tensor, rng, FD_STEP, GRAD_FLOOR, GRAD_TOL};
use mgadn::numgrad::{concat, finite_difference, max_relative_error, Tape, Tensor, Unary, Var};
use rand::Rng;

const CASES: u64 = 50;

/// Builds `sum(op(inputs) * weights)` and checks every input's gradient.
fn check<F>(name: &str, shapes: &[Vec<usize>], positive: bool, op: F)
where
    F: for<'t> Fn(&[Var<'t>]) -> mgadn::Result<Var<'t>>,
{
    for seed in 0..CASES {
        let mut r = rng(seed);
        let mut inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut r, s, 1.0)).collect();
        if positive {
            for t in &mut inputs {
                *t = t.map(|v| v.abs() + 0.1);
            }
        }
        let out_shape = {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
            op(&vars).unwrap().shape()
        };
        let weights = rand_tensor(&mut r, &out_shape, 1.0);

        let eval = |xs: &[Tensor]| -> mgadn::Result<f64> {
            let tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
            let w = tape.constant(weights.clone())?;
            op(&vars)?
                .mul(w)?
                .sum()?
                .value()
                .item()
                .ok_or(mgadn::Error::NotScalar(vec![]))
        };

        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let w = tape.constant(weights.clone()).unwrap();
        let loss = op(&vars).unwrap().mul(w).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();

        for (k, var) in vars.iter().enumerate() {
            let analytic = grads.wrt(*var);
            let numeric = finite_difference(&inputs[k], FD_STEP, |probe| {
                let mut xs = inputs.clone();
                xs[k] = probe.clone();
                eval(&xs)
            })
            .unwrap();
            let err = max_relative_error(&analytic, &numeric, GRAD_FLOOR);
            assert!(err <= GRAD_TOL, "{name} input {k} seed {seed}: relative error {err:e}");
        }
    }
}

fn shapes(list: &[&[usize]]) -> Vec<Vec<usize>> {
    list.iter().map(|s| s.to_vec()).collect()
}

#[test]
fn matmul_batched_and_shared() {
    check("matmul", &shapes(&[&[2, 3, 4], &[2, 4, 5]]), false, |v| {
        v[0].matmul(v[1])
    });
    check("matmul shared rhs", &shapes(&[&[2, 3, 4], &[4, 5]]), false, |v| {
        v[0].matmul(v[1])
    });
    check("matmul 2d", &shapes(&[&[3, 4], &[4, 2]]), false, |v| v[0].matmul(v[1]));
}

#[test]
fn broadcasting_arithmetic() {
    check("add", &shapes(&[&[2, 3, 4], &[4]]), false, |v| v[0].add(v[1]));
    check("sub", &shapes(&[&[2, 3, 4], &[3, 4]]), false, |v| v[0].sub(v[1]));
    check("mul", &shapes(&[&[2, 3, 4], &[2, 1, 4]]), false, |v| v[0].mul(v[1]));
    check("scale", &shapes(&[&[3, 4]]), false, |v| v[0].scale(-1.7));
}

#[test]
fn unary_functions() {
    for u in [Unary::Relu, Unary::LeakyRelu, Unary::Sigmoid, Unary::Tanh, Unary::Exp] {
        check(&format!("{u:?}"), &shapes(&[&[3, 5]]), false, move |v| v[0].apply(u));
    }
    check("ln", &shapes(&[&[3, 5]]), true, |v| v[0].ln());
}

#[test]
fn structural_ops() {
    check("transpose", &shapes(&[&[2, 3, 4]]), false, |v| v[0].transpose());
    check("reshape", &shapes(&[&[2, 3, 4]]), false, |v| v[0].reshape(&[6, 4]));
    check("narrow", &shapes(&[&[2, 5, 3]]), false, |v| v[0].narrow(1, 1, 3));
    check("concat", &shapes(&[&[2, 3, 2], &[2, 3, 4]]), false, |v| {
        concat(&[v[0], v[1]], 2)
    });
}

#[test]
fn softmax_plain_and_masked() {
    check("softmax", &shapes(&[&[2, 3, 4]]), false, |v| v[0].softmax());
    let mask: Rc<[bool]> = Rc::from(vec![true, false, true, false, true, true, false, true, true]);
    check("masked softmax", &shapes(&[&[2, 3, 3]]), false, move |v| {
        v[0].masked_softmax(mask.clone())
    });
}

#[test]
fn reductions() {
    check("l1", &shapes(&[&[3, 4]]), false, |v| v[0].l1_norm());
    check("sq_l2", &shapes(&[&[3, 4]]), false, |v| v[0].sq_l2_norm());
    check("sum", &shapes(&[&[3, 4]]), false, |v| v[0].sum());
    check("mean", &shapes(&[&[3, 4]]), false, |v| v[0].mean());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(7);
    for _ in 0..100 {
        let t = rand_tensor(&mut r, &[3, 6], 20.0);
        let tape = Tape::new();
        let s = tape.constant(t).unwrap().softmax().unwrap().value();
        for row in s.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(11);
    for _ in 0..20 {
        let x = rand_tensor(&mut r, &[3, 4], 1.0);
        let (a, b): (f64, f64) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let tape = Tape::new();
        let v = tape.leaf(x).unwrap();
        let f = v.tanh().unwrap().sum().unwrap();
        let g = v.mul(v).unwrap().sigmoid().unwrap().sum().unwrap();
        let both = f.scale(a).unwrap().add(g.scale(b).unwrap()).unwrap();
        let gf = tape.backward(f).unwrap().wrt(v);
        let gg = tape.backward(g).unwrap().wrt(v);
        let gb = tape.backward(both).unwrap().wrt(v);
        for k in 0..gb.len() {
            let expect = a * gf.data()[k] + b * gg.data()[k];
            assert!((gb.data()[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }
}

#[test]
fn replaying_a_computation_is_bit_identical() {
    let run = || {
        let mut r = rng(5);
        let x = rand_tensor(&mut r, &[2, 3, 4], 1.0);
        let w = rand_tensor(&mut r, &[4, 4], 1.0);
        let tape = Tape::new();
        let xv = tape.leaf(x).unwrap();
        let wv = tape.leaf(w).unwrap();
        let loss = xv.matmul(wv).unwrap().softmax().unwrap().ln().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        (loss.value(), g.wrt(xv), g.wrt(wv))
    };
    assert_eq!(run(), run());
}

#[test]
fn off_path_leaves_get_zero_gradient() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let b = tape.leaf(Tensor::vector(vec![3.0])).unwrap();
    let g = tape.backward(a.sum().unwrap()).unwrap();
    assert_eq!(g.wrt(b).data(), &[0.0]);
}
