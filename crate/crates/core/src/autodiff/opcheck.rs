//! Finite-difference checks for every op kind on the tape.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{grad_check_on, GradCheckReport};
use super::param::{ParamId, ParamStore};
use super::tape::{Basis1d, OpKind, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Smooth three-function basis used to exercise `basis_expand` without
/// depending on a particular layer family.
struct ProbeBasis;

impl Basis1d for ProbeBasis {
    fn size(&self) -> usize {
        3
    }

    fn eval(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) {
        values[0] = x;
        values[1] = x * x;
        values[2] = x.sin();
        if let Some(d) = derivs {
            d[0] = 1.0;
            d[1] = 2.0 * x;
            d[2] = x.cos();
        }
    }
}

pub const CHECKED_OPS: &[OpKind] = &[
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::MatMul,
    OpKind::Exp,
    OpKind::Square,
    OpKind::Silu,
    OpKind::Relu,
    OpKind::LeakyRelu,
    OpKind::Scale,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::Concat,
    OpKind::Slice,
    OpKind::ScatterAdd,
    OpKind::GatherRows,
    OpKind::Broadcast,
    OpKind::Reshape,
    OpKind::Transpose,
    OpKind::RbfExpand,
    OpKind::BasisExpand,
    OpKind::SegmentSoftmax,
    OpKind::MaskedBce,
    OpKind::MaskedMse,
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

struct Case {
    store: ParamStore,
    params: Vec<ParamId>,
    weight: Tensor,
    extra: Vec<Tensor>,
}

impl Case {
    fn new(rng: &mut ChaCha8Rng, shapes: &[&[usize]], out_shape: &[usize]) -> Self {
        let mut store = ParamStore::new();
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("in{i}"), uniform(rng, s)).expect("unique"))
            .collect();
        let weight = uniform(rng, out_shape).map(|v| v / 2.0);
        Case {
            store,
            params,
            weight,
            extra: Vec::new(),
        }
    }
}

/// Reduces `out` to a scalar via a fixed random weighting so that every
/// output entry contributes a distinct sensitivity.
fn weighted(tape: &mut Tape, out: Var, weight: &Tensor) -> Result<Var> {
    let w = tape.constant(weight.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn build(kind: OpKind, rng: &mut ChaCha8Rng) -> Case {
    use OpKind::*;
    match kind {
        Add => Case::new(rng, &[&[3, 4], &[4]], &[3, 4]),
        Sub => Case::new(rng, &[&[3, 4], &[3, 1]], &[3, 4]),
        Mul => Case::new(rng, &[&[3, 4], &[1, 4]], &[3, 4]),
        MatMul => Case::new(rng, &[&[3, 4], &[4, 2], &[2, 4], &[4, 3]], &[3, 2]),
        Concat => Case::new(rng, &[&[2, 3], &[4, 3], &[6, 2]], &[6, 5]),
        Slice => Case::new(rng, &[&[4, 5]], &[4, 3]),
        ScatterAdd => Case::new(rng, &[&[5, 3]], &[3, 3]),
        GatherRows => Case::new(rng, &[&[3, 2]], &[4, 2]),
        Broadcast => Case::new(rng, &[&[1, 3]], &[4, 3]),
        Reshape => Case::new(rng, &[&[3, 4]], &[2, 6]),
        Transpose => Case::new(rng, &[&[3, 4]], &[4, 3]),
        RbfExpand => Case::new(rng, &[&[3, 2], &[4], &[4]], &[3, 8]),
        BasisExpand => Case::new(rng, &[&[3, 2]], &[3, 6]),
        SegmentSoftmax => Case::new(rng, &[&[5, 2]], &[5, 2]),
        Sum | Mean => Case::new(rng, &[&[3, 4]], &[]),
        MaskedBce | MaskedMse => {
            let mut c = Case::new(rng, &[&[3, 2]], &[]);
            let labels = (0..6)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            c.extra.push(Tensor::from_parts(vec![3, 2], labels));
            c.extra
                .push(Tensor::from_parts(vec![3, 2], vec![1., 1., 0., 1., 1., 1.]));
            c
        }
        _ => Case::new(rng, &[&[3, 4]], &[3, 4]),
    }
}

fn forward(kind: OpKind, tape: &mut Tape, store: &ParamStore, case: &Case) -> Result<Var> {
    use OpKind::*;
    let p: Vec<Var> = case.params.iter().map(|&id| tape.param(store, id)).collect();
    let out = match kind {
        Add => tape.add(p[0], p[1])?,
        Sub => tape.sub(p[0], p[1])?,
        Mul => tape.mul(p[0], p[1])?,
        MatMul => {
            // all four transpose combinations, each 3×2
            let nn = tape.matmul(p[0], p[1])?;
            let nt = tape.matmul_t(p[0], p[2], false, true)?;
            let tn = tape.matmul_t(p[3], p[1], true, false)?;
            let tt = tape.matmul_t(p[3], p[2], true, true)?;
            let s1 = tape.add(nn, nt)?;
            let s2 = tape.add(tn, tt)?;
            tape.add(s1, s2)?
        }
        Exp => tape.exp(p[0]),
        Square => tape.square(p[0]),
        Silu => tape.silu(p[0]),
        Relu => tape.relu(p[0]),
        LeakyRelu => tape.leaky_relu(p[0], 0.2),
        Scale => tape.scale(p[0], -1.7),
        Sum => {
            let s = tape.sum(p[0]);
            return Ok(tape.square(s));
        }
        Mean => {
            let s = tape.mean(p[0]);
            return Ok(tape.square(s));
        }
        Concat => {
            let rows = tape.concat(&[p[0], p[1]], 0)?;
            tape.concat(&[rows, p[2]], 1)?
        }
        Slice => tape.slice(p[0], 1, 1, 3)?,
        ScatterAdd => tape.scatter_add(p[0], Arc::from(vec![0, 2, 2, 1, 0]), 3)?,
        GatherRows => tape.gather_rows(p[0], Arc::from(vec![2, 0, 0, 1]))?,
        Broadcast => tape.broadcast(p[0], &[4, 3])?,
        Reshape => tape.reshape(p[0], &[2, 6])?,
        Transpose => tape.transpose(p[0])?,
        RbfExpand => tape.rbf_expand(p[0], p[1], p[2])?,
        BasisExpand => tape.basis_expand(p[0], Arc::new(ProbeBasis))?,
        SegmentSoftmax => tape.segment_softmax(p[0], Arc::from(vec![0, 0, 1, 1, 1]), 2)?,
        MaskedBce => {
            return tape.masked_bce(
                p[0],
                Arc::new(case.extra[0].clone()),
                Arc::new(case.extra[1].clone()),
            )
        }
        MaskedMse => {
            return tape.masked_mse(
                p[0],
                Arc::new(case.extra[0].clone()),
                Arc::new(case.extra[1].clone()),
            )
        }
        Leaf => p[0],
    };
    weighted(tape, out, &case.weight)
}

/// Gradient-checks one op kind over `trials` random draws in [-2, 2] and
/// returns the worst report.
pub fn check_op(
    kind: OpKind,
    trials: usize,
    seed: u64,
    step: f64,
    tol: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9));
    let mut worst: Option<GradCheckReport> = None;
    for _ in 0..trials {
        let mut case = build(kind, &mut rng);
        let params = case.params.clone();
        let mut store = std::mem::take(&mut case.store);
        let report = grad_check_on(
            &mut store,
            &params,
            step,
            tol,
            || {
                let mut t = Tape::new();
                if let Some(f) = fault {
                    t.inject_backward_fault(f);
                }
                t
            },
            |tape, store| forward(kind, tape, store, &case),
        )?;
        if worst
            .as_ref()
            .map_or(true, |w| report.max_rel_error > w.max_rel_error)
        {
            worst = Some(report);
        }
    }
    Ok(worst.expect("at least one trial"))
}
