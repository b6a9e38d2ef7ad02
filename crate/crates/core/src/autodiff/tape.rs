//! Dynamic reverse-mode tape.
//!
//! Every forward operation appends a node holding its value and the ids of
//! its inputs, so node ids are always topologically ordered. The tape is
//! rebuilt for every forward pass; graphs differ from molecule to molecule.

use std::fmt;
use std::sync::Arc;

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A fixed univariate basis expanded per input column, e.g. B-splines.
pub trait Basis1d: Send + Sync {
    fn size(&self) -> usize;
    /// Writes the basis values at `x` into `values` and, when requested,
    /// their derivatives with respect to `x` into `derivs`.
    fn eval(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    Exp,
    Square,
    Silu,
    Relu,
    LeakyRelu,
    Scale,
    Sum,
    Mean,
    Concat,
    Slice,
    ScatterAdd,
    GatherRows,
    Broadcast,
    Reshape,
    Transpose,
    RbfExpand,
    BasisExpand,
    SegmentSoftmax,
    MaskedBce,
    MaskedMse,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Exp => "exp",
            OpKind::Square => "square",
            OpKind::Silu => "silu",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::ScatterAdd => "scatter_add",
            OpKind::GatherRows => "gather_rows",
            OpKind::Broadcast => "broadcast",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::RbfExpand => "rbf_expand",
            OpKind::BasisExpand => "basis_expand",
            OpKind::SegmentSoftmax => "segment_softmax",
            OpKind::MaskedBce => "masked_bce",
            OpKind::MaskedMse => "masked_mse",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Leaf(Option<ParamId>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Exp(Var),
    Square(Var),
    Silu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    ScatterAdd { a: Var, index: Arc<[usize]> },
    GatherRows { a: Var, index: Arc<[usize]> },
    Broadcast(Var),
    Reshape(Var),
    Transpose(Var),
    RbfExpand { x: Var, centers: Var, log_bw: Var },
    BasisExpand { x: Var, basis: Arc<dyn Basis1d> },
    SegmentSoftmax { a: Var, segment: Arc<[usize]> },
    MaskedBce { logits: Var, labels: Arc<Tensor>, mask: Arc<Tensor> },
    MaskedMse { pred: Var, targets: Arc<Tensor>, mask: Arc<Tensor> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf(_) => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Exp(_) => OpKind::Exp,
            Op::Square(_) => OpKind::Square,
            Op::Silu(_) => OpKind::Silu,
            Op::Relu(_) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::ScatterAdd { .. } => OpKind::ScatterAdd,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Broadcast(_) => OpKind::Broadcast,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Transpose(_) => OpKind::Transpose,
            Op::RbfExpand { .. } => OpKind::RbfExpand,
            Op::BasisExpand { .. } => OpKind::BasisExpand,
            Op::SegmentSoftmax { .. } => OpKind::SegmentSoftmax,
            Op::MaskedBce { .. } => OpKind::MaskedBce,
            Op::MaskedMse { .. } => OpKind::MaskedMse,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test fixture: scales every backward contribution of `kind` by 1.25 so
    /// that gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Parameter leaves recorded on this tape.
    pub fn param_leaves(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Leaf(Some(p)) => Some((p, Var(i))),
            _ => None,
        })
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// Leaf whose gradient is tracked but which is not tied to a store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(None), true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf(Some(id)), true)
    }

    // ---- elementwise binary with broadcasting ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    // ---- matmul ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) @ op(b)` where `op` transposes when the flag is set. Both
    /// operands must be rank 2.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k) = if ta {
            (av.shape()[1], av.shape()[0])
        } else {
            (av.shape()[0], av.shape()[1])
        };
        let (k2, n) = if tb {
            (bv.shape()[1], bv.shape()[0])
        } else {
            (bv.shape()[0], bv.shape()[1])
        };
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), ta, bv.data(), tb, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, ta, tb },
            ng,
        ))
    }

    // ---- elementwise unary ----

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            Op::LeakyRelu(a, slope),
            move |x| if x > 0.0 { x } else { slope * x },
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), move |x| c * x)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    // ---- structural ----

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension {
                op: "concat",
                lhs: base,
                rhs: vec![axis],
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Index {
                op: "slice",
                index: start + len,
                len: shape.get(axis).copied().unwrap_or(0),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Slice { a, axis, start },
            ng,
        ))
    }

    /// Segment sum over the leading axis: row `e` of `a` is added into row
    /// `index[e]` of an `n`-row output.
    pub fn scatter_add(&mut self, a: Var, index: Arc<[usize]>, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || index.len() != t.rows() {
            return Err(Error::Dimension {
                op: "scatter_add",
                lhs: t.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index {
                op: "scatter_add",
                index: bad,
                len: n,
            });
        }
        let w = t.row_len();
        let mut data = vec![0.0; n * w];
        for (e, &dst) in index.iter().enumerate() {
            let src = &t.data()[e * w..(e + 1) * w];
            for (o, s) in data[dst * w..(dst + 1) * w].iter_mut().zip(src) {
                *o += s;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = n;
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::ScatterAdd { a, index },
            ng,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: vec![],
                rhs: vec![index.len()],
            });
        }
        let rows = t.rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let w = t.row_len();
        let mut data = Vec::with_capacity(index.len() * w);
        for &i in index.iter() {
            data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::GatherRows { a, index },
            ng,
        ))
    }

    /// Expands size-1 (or missing leading) dimensions of `a` to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let out_shape = broadcast_shape("broadcast", t.shape(), shape)?;
        if out_shape != shape {
            return Err(Error::Dimension {
                op: "broadcast",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let zero = Tensor::zeros(shape);
        let out = binary_broadcast("broadcast", t, &zero, |x, _| x)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Broadcast(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: t.shape().to_vec(),
                rhs: vec![2],
            });
        }
        let out = transpose2(t);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    // ---- fused kernels ----

    /// Gaussian RBF expansion of every column of `x` (N×n_in) against
    /// shared `centers` and `exp(log_bw)` bandwidths (both length M).
    /// Output is N×(n_in·M) with column `i·M + j` holding basis `j` of input `i`.
    pub fn rbf_expand(&mut self, x: Var, centers: Var, log_bw: Var) -> Result<Var> {
        let (xv, cv, bv) = (self.value(x), self.value(centers), self.value(log_bw));
        if xv.rank() != 2 || cv.rank() != 1 || cv.shape() != bv.shape() {
            return Err(Error::Dimension {
                op: "rbf_expand",
                lhs: xv.shape().to_vec(),
                rhs: cv.shape().to_vec(),
            });
        }
        let m = cv.len();
        let inv_bw: Vec<f64> = bv.data().iter().map(|l| (-l).exp()).collect();
        let mut out = Vec::with_capacity(xv.len() * m);
        for &xi in xv.data() {
            for j in 0..m {
                let u = (xi - cv.data()[j]) * inv_bw[j];
                out.push((-0.5 * u * u).exp());
            }
        }
        let shape = vec![xv.shape()[0], xv.shape()[1] * m];
        let ng = self.ng(x) || self.ng(centers) || self.ng(log_bw);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::RbfExpand { x, centers, log_bw },
            ng,
        ))
    }

    /// Expands each column of `x` (N×n_in) through a fixed basis; output is
    /// N×(n_in·K) with column `i·K + j` holding basis `j` of input `i`.
    pub fn basis_expand(&mut self, x: Var, basis: Arc<dyn Basis1d>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Dimension {
                op: "basis_expand",
                lhs: xv.shape().to_vec(),
                rhs: vec![2],
            });
        }
        let k = basis.size();
        let mut out = vec![0.0; xv.len() * k];
        for (chunk, &xi) in out.chunks_mut(k).zip(xv.data()) {
            basis.eval(xi, chunk, None);
        }
        let shape = vec![xv.shape()[0], xv.shape()[1] * k];
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::BasisExpand { x, basis },
            ng,
        ))
    }

    /// Softmax of each column of `a` (E×H or E) within groups of rows that
    /// share a `segment` id.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<[usize]>, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || segment.len() != t.rows() {
            return Err(Error::Dimension {
                op: "segment_softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![segment.len()],
            });
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= n) {
            return Err(Error::Index {
                op: "segment_softmax",
                index: bad,
                len: n,
            });
        }
        let w = t.row_len();
        let mut max = vec![f64::NEG_INFINITY; n * w];
        for (e, &s) in segment.iter().enumerate() {
            for c in 0..w {
                let v = t.data()[e * w + c];
                if v > max[s * w + c] {
                    max[s * w + c] = v;
                }
            }
        }
        let mut out = vec![0.0; t.len()];
        let mut denom = vec![0.0; n * w];
        for (e, &s) in segment.iter().enumerate() {
            for c in 0..w {
                let z = (t.data()[e * w + c] - max[s * w + c]).exp();
                out[e * w + c] = z;
                denom[s * w + c] += z;
            }
        }
        for (e, &s) in segment.iter().enumerate() {
            for c in 0..w {
                out[e * w + c] /= denom[s * w + c];
            }
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SegmentSoftmax { a, segment },
            ng,
        ))
    }

    /// Mean binary cross-entropy with logits over entries where `mask` is 1.
    /// Returns 0 when every entry is masked.
    pub fn masked_bce(&mut self, logits: Var, labels: Arc<Tensor>, mask: Arc<Tensor>) -> Result<Var> {
        let z = self.value(logits);
        check_same("masked_bce", z.shape(), labels.shape())?;
        check_same("masked_bce", z.shape(), mask.shape())?;
        let count: f64 = mask.data().iter().sum();
        let mut total = 0.0;
        for ((&z, &y), &m) in z.data().iter().zip(labels.data()).zip(mask.data()) {
            if m != 0.0 {
                total += m * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
            }
        }
        let loss = if count > 0.0 { total / count } else { 0.0 };
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedBce {
                logits,
                labels,
                mask,
            },
            ng,
        ))
    }

    /// Mean squared error over entries where `mask` is 1.
    pub fn masked_mse(&mut self, pred: Var, targets: Arc<Tensor>, mask: Arc<Tensor>) -> Result<Var> {
        let p = self.value(pred);
        check_same("masked_mse", p.shape(), targets.shape())?;
        check_same("masked_mse", p.shape(), mask.shape())?;
        let count: f64 = mask.data().iter().sum();
        let mut total = 0.0;
        for ((&p, &t), &m) in p.data().iter().zip(targets.data()).zip(mask.data()) {
            if m != 0.0 {
                total += m * (p - t) * (p - t);
            }
        }
        let loss = if count > 0.0 { total / count } else { 0.0 };
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                targets,
                mask,
            },
            ng,
        ))
    }

    // ---- backward ----

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.needs_grad {
                let fault = (self.fault == Some(node.op.kind())).then_some(1.25);
                self.backward_node(node, &g, &mut grads, fault);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        fault: Option<f64>,
    ) {
        let mut send = |v: Var, mut t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            if let Some(f) = fault {
                t.data_mut().iter_mut().for_each(|x| *x *= f);
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf(_) => {}
            Op::Add(a, b) => {
                send(*a, reduce_to(g, val(*a).shape()));
                send(*b, reduce_to(g, val(*b).shape()));
            }
            Op::Sub(a, b) => {
                send(*a, reduce_to(g, val(*a).shape()));
                send(*b, reduce_to(&g.map(|x| -x), val(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.ng(*a) {
                    let ga = binary_broadcast("mul", g, bv, |x, y| x * y).expect("shapes");
                    send(*a, reduce_to(&ga, av.shape()));
                }
                if self.ng(*b) {
                    let gb = binary_broadcast("mul", g, av, |x, y| x * y).expect("shapes");
                    send(*b, reduce_to(&gb, bv.shape()));
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, n) = (g.shape()[0], g.shape()[1]);
                let k = if *ta { av.shape()[0] } else { av.shape()[1] };
                if self.ng(*a) {
                    let mut ga = vec![0.0; av.len()];
                    if !ta {
                        // dA (m×k) = G (m×n) · op(B)ᵀ (n×k)
                        gemm(m, n, k, g.data(), false, bv.data(), !tb, &mut ga, 0.0);
                    } else {
                        // A is k×m: dA = op(B) (k×n) · Gᵀ (n×m)
                        gemm(k, n, m, bv.data(), *tb, g.data(), true, &mut ga, 0.0);
                    }
                    send(*a, Tensor::from_parts(av.shape().to_vec(), ga));
                }
                if self.ng(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    if !tb {
                        // dB (k×n) = op(A)ᵀ (k×m) · G (m×n)
                        gemm(k, m, n, av.data(), !ta, g.data(), false, &mut gb, 0.0);
                    } else {
                        // B is n×k: dB = Gᵀ (n×m) · op(A) (m×k)
                        gemm(n, m, k, g.data(), true, av.data(), *ta, &mut gb, 0.0);
                    }
                    send(*b, Tensor::from_parts(bv.shape().to_vec(), gb));
                }
            }
            Op::Exp(a) => send(*a, zip_map(g, &node.value, |g, y| g * y)),
            Op::Square(a) => send(*a, zip_map(g, val(*a), |g, x| 2.0 * x * g)),
            Op::Silu(a) => send(
                *a,
                zip_map(g, val(*a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                }),
            ),
            Op::Relu(a) => send(
                *a,
                zip_map(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            Op::LeakyRelu(a, slope) => send(
                *a,
                zip_map(g, val(*a), |g, x| if x > 0.0 { g } else { slope * g }),
            ),
            Op::Scale(a, c) => send(*a, g.map(|x| c * x)),
            Op::Sum(a) => send(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                send(*a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::Concat { inputs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let vs = val(v).shape().to_vec();
                    let len = vs[*axis];
                    let mut data = Vec::with_capacity(val(v).len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    offset += len;
                    send(v, Tensor::from_parts(vs, data));
                }
            }
            Op::Slice { a, axis, start } => {
                let shape = val(*a).shape().to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = g.shape()[*axis];
                let mut data = vec![0.0; val(*a).len()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                send(*a, Tensor::from_parts(shape, data));
            }
            Op::ScatterAdd { a, index } => {
                let w = g.row_len();
                let mut data = Vec::with_capacity(index.len() * w);
                for &i in index.iter() {
                    data.extend_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                send(*a, Tensor::from_parts(val(*a).shape().to_vec(), data));
            }
            Op::GatherRows { a, index } => {
                let av = val(*a);
                let w = av.row_len();
                let mut data = vec![0.0; av.len()];
                for (e, &i) in index.iter().enumerate() {
                    for c in 0..w {
                        data[i * w + c] += g.data()[e * w + c];
                    }
                }
                send(*a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::Broadcast(a) => send(*a, reduce_to(g, val(*a).shape())),
            Op::Reshape(a) => send(
                *a,
                Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()),
            ),
            Op::Transpose(a) => send(*a, transpose2(g)),
            Op::RbfExpand { x, centers, log_bw } => {
                let (xv, cv, bv) = (val(*x), val(*centers), val(*log_bw));
                let m = cv.len();
                let inv_bw: Vec<f64> = bv.data().iter().map(|l| (-l).exp()).collect();
                let mut gx = vec![0.0; xv.len()];
                let mut gc = vec![0.0; m];
                let mut gl = vec![0.0; m];
                let rows = node.value.data().chunks_exact(m).zip(g.data().chunks_exact(m));
                for ((&xi, gxi), (phis, gs)) in xv.data().iter().zip(&mut gx).zip(rows) {
                    let mut acc_x = 0.0;
                    for j in 0..m {
                        let gp = gs[j] * phis[j];
                        let u = (xi - cv.data()[j]) * inv_bw[j];
                        // d/dx = -u/bw·φ, d/dc = u/bw·φ, d/dlog_bw = u²·φ
                        let t = gp * u * inv_bw[j];
                        acc_x -= t;
                        gc[j] += t;
                        gl[j] += gp * u * u;
                    }
                    *gxi = acc_x;
                }
                send(*x, Tensor::from_parts(xv.shape().to_vec(), gx));
                send(*centers, Tensor::from_parts(cv.shape().to_vec(), gc));
                send(*log_bw, Tensor::from_parts(bv.shape().to_vec(), gl));
            }
            Op::BasisExpand { x, basis } => {
                let xv = val(*x);
                let k = basis.size();
                let mut values = vec![0.0; k];
                let mut derivs = vec![0.0; k];
                let mut gx = vec![0.0; xv.len()];
                for (idx, &xi) in xv.data().iter().enumerate() {
                    basis.eval(xi, &mut values, Some(&mut derivs));
                    let gs = &g.data()[idx * k..(idx + 1) * k];
                    gx[idx] = gs.iter().zip(&derivs).map(|(a, b)| a * b).sum();
                }
                send(*x, Tensor::from_parts(xv.shape().to_vec(), gx));
            }
            Op::SegmentSoftmax { a, segment } => {
                let y = &node.value;
                let w = y.row_len();
                let n = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n * w];
                for (e, &s) in segment.iter().enumerate() {
                    for c in 0..w {
                        dot[s * w + c] += g.data()[e * w + c] * y.data()[e * w + c];
                    }
                }
                let mut data = vec![0.0; y.len()];
                for (e, &s) in segment.iter().enumerate() {
                    for c in 0..w {
                        let i = e * w + c;
                        data[i] = y.data()[i] * (g.data()[i] - dot[s * w + c]);
                    }
                }
                send(*a, Tensor::from_parts(y.shape().to_vec(), data));
            }
            Op::MaskedBce {
                logits,
                labels,
                mask,
            } => {
                let z = val(*logits);
                let count: f64 = mask.data().iter().sum();
                let scale = if count > 0.0 { g.item() / count } else { 0.0 };
                let data = z
                    .data()
                    .iter()
                    .zip(labels.data())
                    .zip(mask.data())
                    .map(|((&z, &y), &m)| {
                        if m != 0.0 {
                            scale * m * (sigmoid(z) - y)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*logits, Tensor::from_parts(z.shape().to_vec(), data));
            }
            Op::MaskedMse {
                pred,
                targets,
                mask,
            } => {
                let p = val(*pred);
                let count: f64 = mask.data().iter().sum();
                let scale = if count > 0.0 { g.item() / count } else { 0.0 };
                let data = p
                    .data()
                    .iter()
                    .zip(targets.data())
                    .zip(mask.data())
                    .map(|((&p, &t), &m)| {
                        if m != 0.0 {
                            scale * m * 2.0 * (p - t)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*pred, Tensor::from_parts(p.shape().to_vec(), data));
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn transpose2(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

/// `c = op(a)·op(b) + beta·c` with `op(a)` m×k and `op(b)` k×n; the flags
/// say the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the debug assertions above pin each slice to exactly the extent
    // implied by its dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---- broadcasting helpers (rank ≤ 3) ----

fn pad3(shape: &[usize]) -> [usize; 3] {
    let mut out = [1; 3];
    let off = 3 - shape.len();
    for (i, &d) in shape.iter().enumerate() {
        out[off + i] = d;
    }
    out
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() > 3 || b.len() > 3 {
        return Err(Error::Dimension {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    let rank = a.len().max(b.len());
    let (pa, pb) = (pad3(a), pad3(b));
    let mut out = Vec::with_capacity(rank);
    for d in (3 - rank)..3 {
        let (x, y) = (pa[d], pb[d]);
        if x == y || y == 1 {
            out.push(x);
        } else if x == 1 {
            out.push(y);
        } else {
            return Err(Error::Dimension {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

fn strides_for(padded: [usize; 3]) -> [usize; 3] {
    let s2 = if padded[2] == 1 { 0 } else { 1 };
    let s1 = if padded[1] == 1 { 0 } else { padded[2] };
    let s0 = if padded[0] == 1 { 0 } else { padded[1] * padded[2] };
    [s0, s1, s2]
}

fn binary_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let o = pad3(&shape);
    let (sa, sb) = (strides_for(pad3(a.shape())), strides_for(pad3(b.shape())));
    let mut data = Vec::with_capacity(o.iter().product());
    for i0 in 0..o[0] {
        for i1 in 0..o[1] {
            let ba = i0 * sa[0] + i1 * sa[1];
            let bb = i0 * sb[0] + i1 * sb[1];
            for i2 in 0..o[2] {
                data.push(f(a.data()[ba + i2 * sa[2]], b.data()[bb + i2 * sb[2]]));
            }
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Sums `g` over the axes along which `shape` was broadcast.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let o = pad3(g.shape());
    let s = strides_for(pad3(shape));
    let mut data = vec![0.0; shape.iter().product()];
    let mut idx = 0;
    for i0 in 0..o[0] {
        for i1 in 0..o[1] {
            let base = i0 * s[0] + i1 * s[1];
            for i2 in 0..o[2] {
                data[base + i2 * s[2]] += g.data()[idx];
                idx += 1;
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}
