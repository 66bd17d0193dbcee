//! Append-only operation tape with reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Values are
//! referenced through [`Var`] handles, which are cheap `Copy` indices tied to
//! the tape's lifetime. Nodes are appended in evaluation order, so parents
//! always precede children and a single reverse sweep visits each node once.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// LeakyReLU negative slope used throughout the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::LeakyRelu => "leaky_relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
        }
    }

    /// Local derivative from the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize),
    Scale(usize, f64),
    Unary(Unary, usize),
    Transpose(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { input: usize, axis: usize, start: usize },
    Softmax { input: usize },
    L1(usize),
    SqL2(usize),
    Sum(usize),
    Mean(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::Scale(..) => "scale",
            Op::Unary(u, _) => u.name(),
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Softmax { .. } => "softmax",
            Op::L1(_) => "l1_norm",
            Op::SqL2(_) => "sq_l2_norm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    tags: HashMap<String, usize>,
}

#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf (parameter or constant input).
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        self.leaf(value)
    }

    pub fn tag(&self, label: &str, var: Var<'_>) {
        self.inner.borrow_mut().tags.insert(label.to_owned(), var.id);
    }

    pub fn tagged(&self, label: &str) -> Result<Var<'_>> {
        let id = *self
            .inner
            .borrow()
            .tags
            .get(label)
            .ok_or_else(|| Error::UnknownTag(label.to_owned()))?;
        Ok(Var { tape: self, id })
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        inner.nodes.push(Node { value, op });
        Ok(Var { tape: self, id })
    }

    fn with_values<R>(&self, ids: &[usize], f: impl FnOnce(&[&Tensor]) -> R) -> R {
        let inner = self.inner.borrow();
        let vals: Vec<&Tensor> = ids.iter().map(|&i| &inner.nodes[i].value).collect();
        f(&vals)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let root = &inner.nodes[loss.id].value;
        if root.len() != 1 {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&inner, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let shapes = inner.nodes[..=loss.id]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            tags: inner.tags.clone(),
        })
    }

    fn propagate(&self, inner: &Inner, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        {
            let node = &inner.nodes[id];
            let val = |i: usize| &inner.nodes[i].value;
            let mut send = |target: usize, contrib: Tensor| match &mut grads[target] {
                Some(acc) => acc.add_scaled(&contrib, 1.0),
                slot @ None => *slot = Some(contrib),
            };
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let dims = tensor::matmul_dims(av.shape(), bv.shape())?;
                    let bt = tensor::transpose_last2(bv)?;
                    let mut ga = Tensor::zeros(av.shape());
                    tensor::matmul_into(g.data(), bt.data(), bt_dims(dims), ga.data_mut());
                    let mut gb = Tensor::zeros(bv.shape());
                    if dims.shared_rhs {
                        // sum_b a_bᵀ g_b == (stacked a)ᵀ (stacked g)
                        let stacked = tensor::MatMulDims {
                            batch: 1,
                            m: dims.k,
                            k: dims.batch * dims.m,
                            n: dims.n,
                            shared_rhs: true,
                        };
                        let a_flat = av.reshape(&[dims.batch * dims.m, dims.k])?;
                        let at_flat = tensor::transpose_last2(&a_flat)?;
                        tensor::matmul_into(at_flat.data(), g.data(), stacked, gb.data_mut());
                    } else {
                        let at = tensor::transpose_last2(av)?;
                        let d = tensor::MatMulDims {
                            batch: dims.batch,
                            m: dims.k,
                            k: dims.m,
                            n: dims.n,
                            shared_rhs: false,
                        };
                        tensor::matmul_into(at.data(), g.data(), d, gb.data_mut());
                    }
                    send(a, ga);
                    send(b, gb);
                }
                &Op::Binary(kind, a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let bc = tensor::broadcast(av.shape(), bv.shape())?;
                    let gd = g.data();
                    let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                        Binary::Add => (gd.to_vec(), gd.to_vec()),
                        Binary::Sub => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                        Binary::Mul => (
                            gd.iter().zip(&bc.rhs).map(|(g, &o)| g * bv.data()[o]).collect(),
                            gd.iter().zip(&bc.lhs).map(|(g, &o)| g * av.data()[o]).collect(),
                        ),
                    };
                    send(a, tensor::reduce_to(&ga, &bc.lhs, av.shape()));
                    send(b, tensor::reduce_to(&gb, &bc.rhs, bv.shape()));
                }
                &Op::Scale(a, c) => send(a, g.scaled(c)),
                &Op::Unary(u, a) => {
                    let x = val(a);
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data().iter().zip(y.data()))
                        .map(|(g, (&x, &y))| g * u.derivative(x, y))
                        .collect();
                    send(a, Tensor::new(x.shape().to_vec(), data)?);
                }
                &Op::Transpose(a) => send(a, tensor::transpose_last2(g)?),
                &Op::Reshape(a) => send(a, g.reshape(val(a).shape())?),
                Op::Concat { parts, axis } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        send(p, tensor::narrow(g, *axis, start, len)?);
                        start += len;
                    }
                }
                &Op::Narrow { input, axis, start } => {
                    let src = val(input).shape();
                    let (outer, full, inner_len) = tensor::split_axis(src, axis);
                    let len = node.value.shape()[axis];
                    let mut out = Tensor::zeros(src);
                    for o in 0..outer {
                        let dst = o * full * inner_len + start * inner_len;
                        let from = o * len * inner_len;
                        out.data_mut()[dst..dst + len * inner_len]
                            .copy_from_slice(&g.data()[from..from + len * inner_len]);
                    }
                    send(input, out);
                }
                Op::Softmax { input, .. } => {
                    let y = &node.value;
                    let cols = *y.shape().last().unwrap_or(&1);
                    let mut out = Tensor::zeros(y.shape());
                    for ((yr, gr), dr) in y
                        .data()
                        .chunks(cols)
                        .zip(g.data().chunks(cols))
                        .zip(out.data_mut().chunks_mut(cols))
                    {
                        let inner_prod: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..cols {
                            dr[j] = yr[j] * (gr[j] - inner_prod);
                        }
                    }
                    send(*input, out);
                }
                &Op::L1(a) => {
                    let s = g.data()[0];
                    send(a, val(a).map(|x| s * sign(x)));
                }
                &Op::SqL2(a) => {
                    let s = g.data()[0];
                    send(a, val(a).map(|x| 2.0 * s * x));
                }
                &Op::Sum(a) => send(a, Tensor::full(val(a).shape(), g.data()[0])),
                &Op::Mean(a) => {
                    let n = val(a).len() as f64;
                    send(a, Tensor::full(val(a).shape(), g.data()[0] / n));
                }
            }
        }

        Ok(())
    }
}

fn bt_dims(d: tensor::MatMulDims) -> tensor::MatMulDims {
    tensor::MatMulDims {
        batch: d.batch,
        m: d.m,
        k: d.n,
        n: d.k,
        shared_rhs: d.shared_rhs,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Result of a reverse sweep: ∂loss/∂node for every node up to the loss.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    tags: HashMap<String, usize>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` is off the loss path.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.by_id(var.id)
    }

    fn by_id(&self, id: usize) -> Tensor {
        match self.grads.get(id) {
            Some(Some(g)) => g.clone(),
            Some(None) => Tensor::zeros(&self.shapes[id]),
            // created after the loss, so it cannot influence it
            None => Tensor::zeros(&[]),
        }
    }

    pub fn at_tag(&self, label: &str) -> Result<Tensor> {
        let id = *self
            .tags
            .get(label)
            .ok_or_else(|| Error::UnknownTag(label.to_owned()))?;
        Ok(self.by_id(id))
    }
}

// Fallible arithmetic returns `Result`, so the operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    fn unary_op(self, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var<'t>> {
        let out = self.tape.with_values(&[self.id], |v| f(v[0]))?;
        self.tape.push(out, op)
    }

    fn binary(self, other: Var<'t>, kind: Binary) -> Result<Var<'t>> {
        let out = self.tape.with_values(&[self.id, other.id], |v| {
            let (a, b) = (v[0], v[1]);
            let bc = tensor::broadcast(a.shape(), b.shape())?;
            let data = bc
                .lhs
                .iter()
                .zip(&bc.rhs)
                .map(|(&i, &j)| {
                    let (x, y) = (a.data()[i], b.data()[j]);
                    match kind {
                        Binary::Add => x + y,
                        Binary::Sub => x - y,
                        Binary::Mul => x * y,
                    }
                })
                .collect();
            Tensor::new(bc.shape, data)
        })?;
        self.tape.push(out, Op::Binary(kind, self.id, other.id))
    }

    /// Broadcasting elementwise sum.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    /// Broadcasting elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary_op(|t| Ok(t.scaled(c)), Op::Scale(self.id, c))
    }

    /// `[..., m, k] x [k, n]` (shared rhs) or `[..., m, k] x [..., k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self
            .tape
            .with_values(&[self.id, other.id], |v| tensor::matmul(v[0], v[1]))?;
        self.tape.push(out, Op::MatMul(self.id, other.id))
    }

    pub fn apply(self, u: Unary) -> Result<Var<'t>> {
        self.unary_op(|t| Ok(t.map(|x| u.apply(x))), Op::Unary(u, self.id))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.apply(Unary::Relu)
    }

    pub fn leaky_relu(self) -> Result<Var<'t>> {
        self.apply(Unary::LeakyRelu)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.apply(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.apply(Unary::Tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.apply(Unary::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.apply(Unary::Log)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary_op(tensor::transpose_last2, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary_op(|t| t.reshape(shape), Op::Reshape(self.id))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        self.unary_op(
            |t| tensor::narrow(t, axis, start, len),
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t>> {
        self.unary_op(|t| tensor::softmax_last(t, None), Op::Softmax { input: self.id })
    }

    /// Softmax over the last axis restricted to entries where `mask` holds.
    /// The mask spans the trailing axes and repeats over leading ones.
    pub fn masked_softmax(self, mask: Rc<[bool]>) -> Result<Var<'t>> {
        self.unary_op(|t| tensor::softmax_last(t, Some(&mask)), Op::Softmax { input: self.id })
    }

    /// Sum of absolute values.
    pub fn l1_norm(self) -> Result<Var<'t>> {
        self.unary_op(
            |t| Ok(Tensor::scalar(t.data().iter().map(|v| v.abs()).sum())),
            Op::L1(self.id),
        )
    }

    /// Sum of squares.
    pub fn sq_l2_norm(self) -> Result<Var<'t>> {
        self.unary_op(|t| Ok(Tensor::scalar(t.sq_norm())), Op::SqL2(self.id))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary_op(|t| Ok(Tensor::scalar(t.data().iter().sum())), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary_op(
            |t| {
                if t.is_empty() {
                    return Err(Error::shape("mean", "empty tensor"));
                }
                Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
            },
            Op::Mean(self.id),
        )
    }
}

/// Concatenates along `axis`.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let tape = first.tape;
    let out = tape.with_values(&ids, |v| tensor::concat(v, axis))?;
    tape.push(out, Op::Concat { parts: ids, axis })
}
