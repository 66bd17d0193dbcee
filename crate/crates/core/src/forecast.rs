//! Forecast head: graph structure learning over sensor embeddings followed by
//! graph attention and a stacked fully-connected output.
//!
//! Adjacency is stored source-major: `a[j][i] == 1` means sensor `j` is an
//! in-neighbour of destination `i`. Every destination keeps exactly `k`
//! in-neighbours chosen by cosine similarity of the embeddings.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numgrad::{concat, Bound, Init, ParamSpec, Partition, Tensor, Var};

pub const EMBEDDING: &str = "pred.embedding";

/// Top-k in-neighbour mask plus the raw similarities it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMask {
    /// `a[j][i]`, binary, zero diagonal.
    pub a: Vec<Vec<u8>>,
    /// `e[j][i]` for all pairs, diagonal included.
    pub similarity: Vec<Vec<f64>>,
    pub k: usize,
}

impl AdjacencyMask {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// In-neighbours of destination `i`, ascending.
    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.a[j][i] == 1).collect()
    }

    /// Row-major `[i][j]` attention mask: true for `j ∈ N(i) ∪ {i}`.
    pub fn attention_mask(&self) -> Rc<[bool]> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| i == j || self.a[j][i] == 1)
            .collect()
    }
}

/// Cosine similarity between every pair of embedding rows.
pub fn cosine_matrix(emb: &Tensor) -> Result<Vec<Vec<f64>>> {
    let &[n, w] = emb.shape() else {
        return Err(Error::shape(
            "cosine",
            format!("embedding must be [N, w], got {:?}", emb.shape()),
        ));
    };
    let norms: Vec<f64> = (0..n)
        .map(|i| emb.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::InvalidArgument(format!("embedding {i} is the zero vector")));
    }
    let mut e = vec![vec![0.0; n]; n];
    for j in 0..n {
        for i in 0..n {
            let dot: f64 = (0..w).map(|c| emb.row(i)[c] * emb.row(j)[c]).sum();
            e[j][i] = dot / (norms[i] * norms[j]);
        }
    }
    Ok(e)
}

/// For each destination keep the `k` most similar other sensors. Ties go
/// to the lower sensor index.
pub fn learn_structure(emb: &Tensor, k: usize) -> Result<AdjacencyMask> {
    let similarity = cosine_matrix(emb)?;
    let n = similarity.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k must lie in [1, {}], got {k}", n - 1)));
    }
    let mut a = vec![vec![0u8; n]; n];
    for i in 0..n {
        let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        candidates.sort_by(|&x, &y| {
            similarity[y][i]
                .partial_cmp(&similarity[x][i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.cmp(&y))
        });
        for &j in &candidates[..k] {
            a[j][i] = 1;
        }
    }
    Ok(AdjacencyMask { a, similarity, k })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastDims {
    pub n: usize,
    pub window: usize,
    pub embed_dim: usize,
    /// Hidden widths of the output MLP; empty means one linear layer.
    pub out_hidden: Vec<usize>,
}

pub fn param_specs(dims: &ForecastDims) -> Vec<ParamSpec> {
    let ForecastDims {
        n,
        window: d,
        embed_dim: w,
        ..
    } = *dims;
    let mut specs = vec![
        ParamSpec {
            partition: Partition::Pred,
            name: EMBEDDING.into(),
            shape: vec![n, w],
            init: Init::Embedding { fan_in: w },
        },
        ParamSpec::weight(Partition::Pred, "pred.gat.w", &[w, d], d),
        ParamSpec::weight(Partition::Pred, "pred.gat.a", &[4 * w, 1], 4 * w),
    ];
    let mut fan_in = n * w;
    for (l, &width) in dims.out_hidden.iter().chain(std::iter::once(&n)).enumerate() {
        specs.push(ParamSpec::weight(
            Partition::Pred,
            format!("pred.out.{l}.w"),
            &[fan_in, width],
            fan_in,
        ));
        specs.push(ParamSpec::bias(Partition::Pred, format!("pred.out.{l}.b"), width));
        fan_in = width;
    }
    specs
}

/// Node representations and the attention that produced them.
pub struct GatOutput<'t> {
    /// `[B, N, w]`
    pub nodes: Var<'t>,
    /// `[B, N, N]`, row `i` over sources `j`; zero outside `N(i) ∪ {i}`.
    pub attention: Var<'t>,
}

/// Graph attention over sensors. Node `i` reads column `i` of `z`
/// (its `d`-length refined series).
pub fn gat_forward<'t>(z: Var<'t>, emb: Var<'t>, mask: &AdjacencyMask, p: &Bound<'t>) -> Result<GatOutput<'t>> {
    let (b, n) = match z.shape().as_slice() {
        &[b, _, n] => (b, n),
        other => return Err(Error::shape("gat", format!("expected [B, d, N], got {other:?}"))),
    };
    let w_mat = p.get("pred.gat.w")?;
    let w = w_mat.shape()[0];
    if mask.n() != n || emb.shape() != [n, w] {
        return Err(Error::shape(
            "gat",
            format!("{n} sensors vs mask of {} and embedding {:?}", mask.n(), emb.shape()),
        ));
    }
    let x_nodes = z.transpose()?;
    let wx = x_nodes.matmul(w_mat.transpose()?)?;
    let tape = z.tape();
    let emb_b = tape.constant(Tensor::zeros(&[b, n, w]))?.add(emb)?;
    let g = concat(&[emb_b, wx], 2)?;
    let a = p.get("pred.gat.a")?;
    let s_dst = g.matmul(a.narrow(0, 0, 2 * w)?)?;
    let s_src = g.matmul(a.narrow(0, 2 * w, 2 * w)?)?.transpose()?;
    let logits = s_dst.add(s_src)?.leaky_relu()?;
    let attention = logits.masked_softmax(mask.attention_mask())?;
    let nodes = attention.matmul(wx)?.relu()?;
    Ok(GatOutput { nodes, attention })
}

/// `f([v_1 ∘ z_1, ..., v_N ∘ z_N])` with `f` the stacked output layers.
pub fn predict<'t>(nodes: Var<'t>, emb: Var<'t>, p: &Bound<'t>, layers: usize) -> Result<Var<'t>> {
    let shape = nodes.shape();
    let &[b, n, w] = shape.as_slice() else {
        return Err(Error::shape("predict", format!("expected [B, N, w], got {shape:?}")));
    };
    if emb.shape() != [n, w] {
        return Err(Error::shape(
            "predict",
            format!("node width {w} vs embedding {:?}", emb.shape()),
        ));
    }
    let mut h = nodes.mul(emb)?.reshape(&[b, n * w])?;
    for l in 0..layers {
        h = h
            .matmul(p.get(&format!("pred.out.{l}.w"))?)?
            .add(p.get(&format!("pred.out.{l}.b"))?)?;
        if l + 1 < layers {
            h = h.relu()?;
        }
    }
    Ok(h)
}
