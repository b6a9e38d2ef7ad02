use std::sync::Arc;

use super::opcheck::{check_op, CHECKED_OPS};
use super::*;

fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn silu_at_zero_is_zero_with_half_slope() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::scalar(0.0));
    let y = tape.silu(x);
    assert_eq!(tape.value(y).item(), 0.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 0.5);
}

#[test]
fn identity_matmul_returns_operand() {
    let mut tape = Tape::new();
    let a = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
    let i = tape.constant(Tensor::eye(3));
    let av = tape.constant(a.clone());
    let out = tape.matmul(i, av).unwrap();
    assert_eq!(tape.value(out), &a);
}

#[test]
fn scatter_add_is_segment_sum() {
    let mut tape = Tape::new();
    let rows = tape.constant(Tensor::matrix(3, 2, vec![1., 2., 10., 20., 100., 200.]).unwrap());
    let out = tape.scatter_add(rows, Arc::from(vec![0, 0, 1]), 2).unwrap();
    assert_eq!(tape.value(out).data(), &[11., 22., 100., 200.]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(vec![1., 2., 3.]));
    let sq = tape.square(x);
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2., 4., 6.]);
}

#[test]
fn non_scalar_root_is_contract_error() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(vec![1., 2.]));
    assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
}

#[test]
fn shape_and_index_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    let err = tape.scatter_add(a, Arc::from(vec![0]), 1).unwrap_err();
    assert!(matches!(err, crate::Error::Dimension { op: "scatter_add", .. }));
    let err = tape.gather_rows(a, Arc::from(vec![0, 5])).unwrap_err();
    assert!(matches!(err, crate::Error::Index { op: "gather_rows", index: 5, .. }));
    let err = tape.scatter_add(a, Arc::from(vec![0, 4]), 2).unwrap_err();
    assert!(matches!(err, crate::Error::Index { op: "scatter_add", .. }));
}

#[test]
fn exp_gradient_matches_numeric() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![0.0])).unwrap();
    let report = grad_check(&mut store, &[x], 1e-5, 1e-9, |tape, store| {
        let v = tape.param(store, x);
        let e = tape.exp(v);
        Ok(tape.sum(e))
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn mean_of_matmul_weight_gradient() {
    let mut store = ParamStore::new();
    let w = store
        .add("w", Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 1.1, 0.05, -0.4]).unwrap())
        .unwrap();
    let x = Tensor::matrix(3, 1, vec![0.5, -1.5, 2.0]).unwrap();
    let report = grad_check(&mut store, &[w], 1e-5, 1e-6, |tape, store| {
        let wv = tape.param(store, w);
        let xv = tape.constant(x.clone());
        let y = tape.matmul(wv, xv)?;
        Ok(tape.mean(y))
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    for &kind in CHECKED_OPS {
        let report = check_op(kind, 20, 7, 1e-5, 1e-6, None).unwrap();
        assert!(report.passed, "{kind}: {report:?}");
    }
}

#[test]
fn corrupted_backward_rule_is_caught() {
    for kind in [OpKind::Silu, OpKind::MatMul, OpKind::RbfExpand, OpKind::ScatterAdd] {
        let report = check_op(kind, 2, 1, 1e-5, 1e-4, Some(kind)).unwrap();
        assert!(!report.passed, "{kind} fault went unnoticed");
    }
}

#[test]
fn gradients_are_additive_over_independent_subgraphs() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::vector(vec![0.4, -1.3])).unwrap();
    let b = store.add("b", Tensor::vector(vec![1.7, 0.2, -0.9])).unwrap();

    let grads_of = |store: &mut ParamStore, which: u8| {
        let mut tape = Tape::new();
        let av = tape.param(store, a);
        let bv = tape.param(store, b);
        let fa = tape.silu(av);
        let fa = tape.sum(fa);
        let fb = tape.exp(bv);
        let fb = tape.mean(fb);
        let root = match which {
            0 => fa,
            1 => fb,
            _ => tape.add(fa, fb).unwrap(),
        };
        let g = tape.backward(root).unwrap();
        store.zero_grads();
        store.accumulate(&tape, &g);
        (store.grad(a).clone(), store.grad(b).clone())
    };
    let (ga, zb) = grads_of(&mut store, 0);
    let (za, gb) = grads_of(&mut store, 1);
    let (ta, tb) = grads_of(&mut store, 2);
    assert!(zb.data().iter().all(|&v| v == 0.0));
    assert!(za.data().iter().all(|&v| v == 0.0));
    assert_eq!(ta, ga);
    assert_eq!(tb, gb);
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.4, -1.5, 0.6]).unwrap());
        let c = tape.constant(Tensor::vector(vec![-1.0, 0.0, 1.0]));
        let l = tape.constant(Tensor::vector(vec![0.0, -0.5, 0.3]));
        let r = tape.rbf_expand(x, c, l).unwrap();
        let s = tape.silu(r);
        tape.value(s).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn broadcast_add_reduces_gradient_to_bias_shape() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[4, 3]));
    let b = tape.input(Tensor::vector(vec![1., 2., 3.]));
    let y = tape.add(x, b).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(b).unwrap().data(), &[4., 4., 4.]);
    assert!(approx(tape.value(s).item(), 24.0, 0.0));
}

#[test]
fn masked_bce_closed_forms() {
    let mut tape = Tape::new();
    let z = tape.input(Tensor::zeros(&[1, 1]));
    let l = tape
        .masked_bce(z, Arc::new(Tensor::full(&[1, 1], 1.0)), Arc::new(Tensor::full(&[1, 1], 1.0)))
        .unwrap();
    assert!(approx(tape.value(l).item(), std::f64::consts::LN_2, 1e-15));

    let l0 = tape
        .masked_bce(z, Arc::new(Tensor::full(&[1, 1], 1.0)), Arc::new(Tensor::zeros(&[1, 1])))
        .unwrap();
    assert_eq!(tape.value(l0).item(), 0.0);
    let g = tape.backward(l0).unwrap();
    assert_eq!(g.get(z).unwrap().data(), &[0.0]);
}
