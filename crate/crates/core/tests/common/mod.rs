//! Helpers and independent oracles shared by the integration suites.
//!
//! Every oracle here is written with plain loops over slices and never
//! calls the code path it is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use mgadn::model::{Model, ModelConfig};
use mgadn::mtl;
use mgadn::numgrad::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Entries smaller than this compare on an absolute scale. Central
/// differences of losses near 20 carry about 1e-9 of round-off at this step.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, len, scale)).unwrap()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// The small model the gradient suites run on: N=4, d=5, w=3, L=2.
pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::new(4, 5, 2);
    c.embed_dim = 3;
    c.latent = 2;
    c
}

/// Forecast and reconstruction losses for a fixed batch and noise draw.
pub fn both_losses(model: &Model, x: &Tensor, y: &Tensor, eps: &Tensor) -> (f64, f64) {
    let tape = Tape::new();
    let bound = model.params.bind(&tape).unwrap();
    let fwd = model.forward(&tape, &bound, x, Some(eps)).unwrap();
    let ls = mtl::losses(&fwd, y).unwrap();
    (
        ls.pred.unwrap().value().item().unwrap(),
        ls.recon.unwrap().value().item().unwrap(),
    )
}

/// Worst relative error per parameter-name prefix, comparing tape
/// gradients of both losses with central differences.
pub fn model_gradient_errors(seed: u64) -> BTreeMap<&'static str, f64> {
    let mut r = rng(seed);
    let model = generic_model(seed);
    let (b, d, n, l) = (2, 5, 4, 2);
    let x = rand_tensor(&mut r, &[b, d, n], 1.0);
    let y = rand_tensor(&mut r, &[b, n], 1.0);
    let eps = rand_tensor(&mut r, &[b, l], 1.0);

    let tape = Tape::new();
    let bound = model.params.bind(&tape).unwrap();
    let fwd = model.forward(&tape, &bound, &x, Some(&eps)).unwrap();
    let ls = mtl::losses(&fwd, &y).unwrap();
    let g_pred = bound.grads(&tape.backward(ls.pred.unwrap()).unwrap());
    let g_recon = bound.grads(&tape.backward(ls.recon.unwrap()).unwrap());

    let mut worst = BTreeMap::new();
    for (_, name, value) in model.params.iter() {
        let group = module_of(name);
        let mut probe = model.clone();
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.params.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let (pu, ru) = both_losses(&probe, &x, &y, &eps);
            probe.params.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let (pd, rd) = both_losses(&probe, &x, &y, &eps);
            probe.params.get_mut(name).unwrap().data_mut()[i] = orig;
            let num_p = (pu - pd) / (2.0 * FD_STEP);
            let num_r = (ru - rd) / (2.0 * FD_STEP);
            let an_p = g_pred.get(name).unwrap().data()[i];
            let an_r = g_recon.get(name).unwrap().data()[i];
            let e = rel_err(an_p, num_p, GRAD_FLOOR).max(rel_err(an_r, num_r, GRAD_FLOOR));
            let slot = worst.entry(group).or_insert(0.0f64);
            *slot = slot.max(e);
        }
    }
    worst
}

/// The tiny model with every parameter redrawn, biases included, so that
/// no ReLU input sits exactly on its kink.
pub fn generic_model(seed: u64) -> Model {
    let mut model = Model::init(tiny_config(), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for (_, _, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    model
}

pub fn module_of(name: &str) -> &'static str {
    if name.starts_with("shared.lstm") {
        "bilstm"
    } else if name.starts_with("shared.attn") {
        "self-attention"
    } else if name.starts_with("pred.") {
        "graph-attention forecaster"
    } else {
        "vae"
    }
}

/// Graph attention written per node: `z` is `[d][n]`, `emb` is `[n][w]`,
/// `w_mat` is `[w][d]`, `a` has `4w` entries, `adj[j][i]` marks edges.
pub fn gat_oracle(
    z: &[Vec<f64>],
    emb: &[Vec<f64>],
    w_mat: &[Vec<f64>],
    a: &[f64],
    adj: &[Vec<u8>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = emb.len();
    let w = emb[0].len();
    let d = z.len();
    let wx: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..w).map(|r| (0..d).map(|t| w_mat[r][t] * z[t][i]).sum()).collect())
        .collect();
    let g: Vec<Vec<f64>> = (0..n).map(|i| emb[i].iter().chain(&wx[i]).copied().collect()).collect();
    let leaky = |v: f64| if v > 0.0 { v } else { 0.2 * v };
    let mut nodes = vec![vec![0.0; w]; n];
    let mut att = vec![vec![0.0; n]; n];
    for i in 0..n {
        let members: Vec<usize> = (0..n).filter(|&j| j == i || adj[j][i] == 1).collect();
        let logits: Vec<f64> = members
            .iter()
            .map(|&j| {
                let cat: Vec<f64> = g[i].iter().chain(&g[j]).copied().collect();
                leaky(cat.iter().zip(a).map(|(c, p)| c * p).sum())
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = ex.iter().sum();
        for (k, &j) in members.iter().enumerate() {
            att[i][j] = ex[k] / total;
            for r in 0..w {
                nodes[i][r] += att[i][j] * wx[j][r];
            }
        }
        for v in &mut nodes[i] {
            *v = v.max(0.0);
        }
    }
    (nodes, att)
}

/// Median and interquartile range by explicit order statistics.
pub fn median_iqr_oracle(values: &[f64]) -> (f64, f64) {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    (at(0.5), (at(0.75) - at(0.25)).max(1e-6))
}

/// Deviation score per timestamp from raw per-head predictions.
/// Each of `pred`, `recon`, `truth` is `[T][N]`; `val_*` are the
/// validation counterparts used to fit the statistics.
pub fn score_oracle(
    pred: &[Vec<f64>],
    recon: &[Vec<f64>],
    truth: &[Vec<f64>],
    val_pred: &[Vec<f64>],
    val_recon: &[Vec<f64>],
    val_truth: &[Vec<f64>],
) -> Vec<f64> {
    let n = truth[0].len();
    let err = |a: &[Vec<f64>], b: &[Vec<f64>], t: usize, i: usize| (a[t][i] - b[t][i]).abs();
    let stats = |h: &[Vec<f64>], i: usize| {
        let col: Vec<f64> = (0..val_truth.len()).map(|t| err(h, val_truth, t, i)).collect();
        median_iqr_oracle(&col)
    };
    let sp: Vec<(f64, f64)> = (0..n).map(|i| stats(val_pred, i)).collect();
    let sr: Vec<(f64, f64)> = (0..n).map(|i| stats(val_recon, i)).collect();
    (0..truth.len())
        .map(|t| {
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                best = best.max((err(pred, truth, t, i) - sp[i].0) / sp[i].1);
                best = best.max((err(recon, truth, t, i) - sr[i].0) / sr[i].1);
            }
            best
        })
        .collect()
}

/// `(argmin, min)` of `‖α g1 + (1-α) g2‖²` over the grid `α = k/1000`.
pub fn mgda_grid(g1: &[f64], g2: &[f64]) -> (f64, f64) {
    (0..=1000)
        .map(|k| {
            let a = k as f64 / 1000.0;
            let norm: f64 = g1.iter().zip(g2).map(|(x, y)| (a * x + (1.0 - a) * y).powi(2)).sum();
            (a, norm)
        })
        .fold(
            (f64::NAN, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

pub fn combo_norm(a: f64, g1: &[f64], g2: &[f64]) -> f64 {
    g1.iter().zip(g2).map(|(x, y)| (a * x + (1.0 - a) * y).powi(2)).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Point-wise precision, recall and F1 with zero-denominator conventions.
pub fn metrics_oracle(pred: &[u8], label: &[u8]) -> (f64, f64, f64) {
    let count = |p: u8, l: u8| pred.iter().zip(label).filter(|&(&a, &b)| a == p && b == l).count() as f64;
    let (tp, fp, fneg) = (count(1, 1), count(1, 0), count(0, 1));
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
    let f1 = if prec + rec > 0.0 {
        2.0 * prec * rec / (prec + rec)
    } else {
        0.0
    };
    (prec, rec, f1)
}
