//! Graph attention against a per-node oracle, plus equivariance and
//! locality of the forecast head.

mod common;

use common::{gat_oracle, rand_tensor, rng};
use mgadn::forecast::{gat_forward, learn_structure, predict, AdjacencyMask};
use mgadn::numgrad::{ParamStore, Partition, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

struct Head {
    n: usize,
    d: usize,
    w: usize,
    hidden: usize,
    store: ParamStore,
}

fn head(seed: u64, n: usize, d: usize, w: usize) -> Head {
    let mut r = rng(seed);
    let hidden = 2 * n;
    let mut store = ParamStore::new(seed);
    let mut put = |name: &str, shape: &[usize], r: &mut rand_chacha::ChaCha8Rng| {
        store.insert(Partition::Pred, name, rand_tensor(r, shape, 0.8)).unwrap();
    };
    put("pred.embedding", &[n, w], &mut r);
    put("pred.gat.w", &[w, d], &mut r);
    put("pred.gat.a", &[4 * w, 1], &mut r);
    put("pred.out.0.w", &[n * w, hidden], &mut r);
    put("pred.out.0.b", &[hidden], &mut r);
    put("pred.out.1.w", &[hidden, n], &mut r);
    put("pred.out.1.b", &[n], &mut r);
    Head { n, d, w, hidden, store }
}

fn rows(t: &Tensor, r: usize, c: usize, offset: usize) -> Vec<Vec<f64>> {
    (0..r)
        .map(|i| t.data()[offset + i * c..offset + (i + 1) * c].to_vec())
        .collect()
}

/// Node outputs `[B][N][w]`, attention `[B][N][N]` and forecasts `[B][N]`.
type Outputs = (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>);

fn run(h: &Head, z: &Tensor, mask: &AdjacencyMask) -> Outputs {
    let tape = Tape::new();
    let p = h.store.bind(&tape).unwrap();
    let zv = tape.constant(z.clone()).unwrap();
    let emb = p.get("pred.embedding").unwrap();
    let out = gat_forward(zv, emb, mask, &p).unwrap();
    let pred = predict(out.nodes, emb, &p, 2).unwrap().value();
    let b = z.shape()[0];
    let (nodes, att) = (out.nodes.value(), out.attention.value());
    (
        (0..b).map(|k| rows(&nodes, h.n, h.w, k * h.n * h.w)).collect(),
        (0..b).map(|k| rows(&att, h.n, h.n, k * h.n * h.n)).collect(),
        rows(&pred, b, h.n, 0),
    )
}

#[test]
fn matches_per_node_oracle() {
    let mut worst = 0.0f64;
    for seed in 0..30 {
        let mut r = rng(seed + 1000);
        let n = r.random_range(3..=7);
        let d = r.random_range(1..=6);
        let w = r.random_range(1..=4);
        let h = head(seed, n, d, w);
        let mask = learn_structure(h.store.get("pred.embedding").unwrap(), r.random_range(1..n)).unwrap();
        let z = rand_tensor(&mut r, &[2, d, n], 1.5);
        let (nodes, att, _) = run(&h, &z, &mask);

        let emb = rows(h.store.get("pred.embedding").unwrap(), n, w, 0);
        let w_mat = rows(h.store.get("pred.gat.w").unwrap(), w, d, 0);
        let a = h.store.get("pred.gat.a").unwrap().data().to_vec();
        for b in 0..2 {
            let zb = rows(&z, d, n, b * d * n);
            let (want_nodes, want_att) = gat_oracle(&zb, &emb, &w_mat, &a, &mask.a);
            for i in 0..n {
                for c in 0..w {
                    worst = worst.max((nodes[b][i][c] - want_nodes[i][c]).abs());
                }
                for j in 0..n {
                    worst = worst.max((att[b][i][j] - want_att[i][j]).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-12, "max deviation from oracle {worst:e}");
}

#[test]
fn attention_rows_are_distributions_over_the_neighbourhood() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let h = head(seed, 6, 4, 3);
        let mask = learn_structure(h.store.get("pred.embedding").unwrap(), 2).unwrap();
        let z = rand_tensor(&mut r, &[3, 4, 6], 3.0);
        let (_, att, _) = run(&h, &z, &mask);
        for batch in &att {
            for (i, row) in batch.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                for (j, &p) in row.iter().enumerate() {
                    assert!(p >= 0.0);
                    if j != i && mask.a[j][i] == 0 {
                        assert_eq!(p, 0.0);
                    }
                }
            }
        }
    }
}

/// Applies sensor permutation `perm` (new index `q` holds old `perm[q]`)
/// to every sensor-indexed parameter.
fn permuted(h: &Head, perm: &[usize]) -> Head {
    let (n, w, hidden) = (h.n, h.w, h.hidden);
    let get = |name: &str| h.store.get(name).unwrap().clone();
    let mut store = ParamStore::new(0);
    let emb = get("pred.embedding");
    let emb_p: Vec<f64> = perm.iter().flat_map(|&o| emb.row(o).to_vec()).collect();
    store
        .insert(
            Partition::Pred,
            "pred.embedding",
            Tensor::new(vec![n, w], emb_p).unwrap(),
        )
        .unwrap();
    store.insert(Partition::Pred, "pred.gat.w", get("pred.gat.w")).unwrap();
    store.insert(Partition::Pred, "pred.gat.a", get("pred.gat.a")).unwrap();
    // first layer rows come in per-sensor blocks of w
    let w0 = get("pred.out.0.w");
    let w0_p: Vec<f64> = perm
        .iter()
        .flat_map(|&o| w0.data()[o * w * hidden..(o + 1) * w * hidden].to_vec())
        .collect();
    store
        .insert(
            Partition::Pred,
            "pred.out.0.w",
            Tensor::new(vec![n * w, hidden], w0_p).unwrap(),
        )
        .unwrap();
    store
        .insert(Partition::Pred, "pred.out.0.b", get("pred.out.0.b"))
        .unwrap();
    // last layer columns are sensors
    let w1 = get("pred.out.1.w");
    let w1_p: Vec<f64> = (0..hidden)
        .flat_map(|r| perm.iter().map(move |&o| (r, o)))
        .map(|(r, o)| w1.data()[r * n + o])
        .collect();
    store
        .insert(
            Partition::Pred,
            "pred.out.1.w",
            Tensor::new(vec![hidden, n], w1_p).unwrap(),
        )
        .unwrap();
    let b1 = get("pred.out.1.b");
    let b1_p: Vec<f64> = perm.iter().map(|&o| b1.data()[o]).collect();
    store
        .insert(Partition::Pred, "pred.out.1.b", Tensor::vector(b1_p))
        .unwrap();
    Head {
        n,
        d: h.d,
        w,
        hidden,
        store,
    }
}

#[test]
fn permuting_sensors_permutes_forecasts() {
    let mut checked = 0;
    for seed in 0..20 {
        let mut r = rng(seed + 7);
        let (n, d, w) = (5, 4, 3);
        let h = head(seed, n, d, w);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let hp = permuted(&h, &perm);
        let z = rand_tensor(&mut r, &[2, d, n], 1.0);
        let zp_data: Vec<f64> = (0..2 * d)
            .flat_map(|row| perm.iter().map(move |&o| (row, o)))
            .map(|(row, o)| z.data()[row * n + o])
            .collect();
        let zp = Tensor::new(vec![2, d, n], zp_data).unwrap();

        let mask = learn_structure(h.store.get("pred.embedding").unwrap(), 2).unwrap();
        let mask_p = learn_structure(hp.store.get("pred.embedding").unwrap(), 2).unwrap();
        // skip draws whose top-k depends on the index tie rule
        let ties = (0..n).any(|i| {
            let mut s: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| mask.similarity[j][i]).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            (s[1] - s[2]).abs() < 1e-12
        });
        if ties {
            continue;
        }
        let (_, _, pred) = run(&h, &z, &mask);
        let (_, _, pred_p) = run(&hp, &zp, &mask_p);
        for b in 0..2 {
            for (q, &o) in perm.iter().enumerate() {
                assert!((pred_p[b][q] - pred[b][o]).abs() <= 1e-12, "seed {seed}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 15, "only {checked} tie-free draws");
}

#[test]
fn zeroing_a_non_neighbour_leaves_a_node_unchanged() {
    let mut checked = 0;
    for seed in 0..20 {
        let mut r = rng(seed + 50);
        let (n, d, w) = (6, 4, 3);
        let h = head(seed, n, d, w);
        let mask = learn_structure(h.store.get("pred.embedding").unwrap(), 2).unwrap();
        let z = rand_tensor(&mut r, &[1, d, n], 1.0);
        let (nodes, _, _) = run(&h, &z, &mask);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i && mask.a[j][i] == 0) {
                let mut zz = z.clone();
                for t in 0..d {
                    zz.data_mut()[t * n + j] = 0.0;
                }
                let (nodes2, _, _) = run(&h, &zz, &mask);
                assert_eq!(nodes2[0][i], nodes[0][i], "node {i} moved when {j} was zeroed");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}
