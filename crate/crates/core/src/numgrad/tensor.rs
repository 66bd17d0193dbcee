//! Dense row-major `f64` tensors and the raw kernels the tape builds on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.iter().flatten().copied().collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element at a 2-D position.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Row `r` of a matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[self.rank() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> Tensor {
        self.map(|v| v * scale)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Output shape and per-output source offsets for numpy-style broadcasting.
pub(crate) struct Broadcast {
    pub shape: Vec<usize>,
    pub lhs: Vec<usize>,
    pub rhs: Vec<usize>,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn source_offsets(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - src.len();
    // stride of each output axis inside `src`, zero where broadcast
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        if i >= pad {
            let d = src[i - pad];
            strides[i] = if d == 1 { 0 } else { acc };
            acc *= d;
        }
    }
    let total: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let shape = broadcast_shape(a, b).ok_or_else(|| Error::shape("broadcast", format!("{a:?} vs {b:?}")))?;
    let lhs = source_offsets(&shape, a);
    let rhs = source_offsets(&shape, b);
    Ok(Broadcast { shape, lhs, rhs })
}

/// Sums `grad` (laid out in the broadcast output shape) back into `src_shape`.
pub(crate) fn reduce_to(grad: &[f64], offsets: &[usize], src_shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(src_shape);
    for (g, &o) in grad.iter().zip(offsets) {
        out.data[o] += g;
    }
    out
}

/// Layout of a (possibly batched) matrix product.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatMulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// rhs is a single matrix shared across the batch
    pub shared_rhs: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", format!("{a:?} x {b:?}: rank < 2")));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(Error::shape("matmul", format!("{a:?} x {b:?}: inner dims differ")));
    }
    let batch: usize = a[..a.len() - 2].iter().product();
    let shared_rhs = b.len() == 2;
    if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(Error::shape("matmul", format!("{a:?} x {b:?}: batch dims differ")));
    }
    Ok(MatMulDims {
        batch,
        m,
        k,
        n,
        shared_rhs,
    })
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], dims: MatMulDims, out: &mut [f64]) {
    let MatMulDims { batch, m, k, n, .. } = dims;
    for bi in 0..batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = if dims.shared_rhs {
            b
        } else {
            &b[bi * k * n..(bi + 1) * k * n]
        };
        let out = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dims = matmul_dims(&a.shape, &b.shape)?;
    let mut shape = a.shape[..a.rank() - 2].to_vec();
    shape.extend([dims.m, dims.n]);
    let mut out = Tensor::zeros(&shape);
    matmul_into(&a.data, &b.data, dims, &mut out.data);
    Ok(out)
}

/// Swaps the last two axes.
pub fn transpose_last2(t: &Tensor) -> Result<Tensor> {
    if t.rank() < 2 {
        return Err(Error::shape("transpose", format!("rank {} < 2", t.rank())));
    }
    let r = t.rank();
    let (m, n) = (t.shape[r - 2], t.shape[r - 1]);
    let batch: usize = t.shape[..r - 2].iter().product();
    let mut shape = t.shape.clone();
    shape.swap(r - 2, r - 1);
    let mut data = vec![0.0; t.len()];
    for b in 0..batch {
        let src = &t.data[b * m * n..(b + 1) * m * n];
        let dst = &mut data[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    Ok(Tensor { shape, data })
}

/// (outer, axis length, inner) decomposition around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::shape("concat", format!("axis {axis} out of range")));
    }
    let mut shape = first.shape.clone();
    shape[axis] = 0;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} along axis {axis}", p.shape, first.shape),
            ));
        }
        shape[axis] += p.shape[axis];
    }
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(shape, data)
}

pub fn narrow(t: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= t.rank() || start + len > t.shape[axis] {
        return Err(Error::shape(
            "narrow",
            format!("{:?} axis {axis} [{start}, {})", t.shape, start + len),
        ));
    }
    let (outer, full, inner) = split_axis(&t.shape, axis);
    let mut shape = t.shape.clone();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        data.extend_from_slice(&t.data[base..base + len * inner]);
    }
    Tensor::new(shape, data)
}

/// Softmax over the last axis. Entries where `mask` is false get weight 0;
/// the mask covers the trailing axes and repeats over leading ones.
pub fn softmax_last(t: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let cols = *t.shape.last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
    if let Some(m) = mask {
        if m.is_empty() || !t.len().is_multiple_of(m.len()) || m.len() % cols.max(1) != 0 {
            return Err(Error::shape(
                "softmax",
                format!("mask of {} entries vs shape {:?}", m.len(), t.shape),
            ));
        }
    }
    let mut out = vec![0.0; t.len()];
    for (r, (src, dst)) in t.data.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[(r * cols + j) % m.len()]);
        let max = (0..cols)
            .filter(|&j| keep(j))
            .map(|j| src[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::shape("softmax", "row with every entry masked"));
        }
        let mut sum = 0.0;
        for j in 0..cols {
            if keep(j) {
                dst[j] = (src[j] - max).exp();
                sum += dst[j];
            }
        }
        for v in dst.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(t.shape.clone(), out)
}
