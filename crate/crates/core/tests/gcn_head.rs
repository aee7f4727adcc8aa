mod common;

use std::rc::Rc;

use common::{pair_index, random_tensor, random_weighted_graph, rng};
use icenet::encoders::Encoded;
use icenet::gcn::{self, GcnDims, GcnParams, NodeReps};
use icenet::graph::{AttentiveGraph, AttentionContext, AttentionScheme};
use icenet::sparse::CsrMatrix;
use icenet::tape::Tape;
use icenet::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

fn convolve_value(adj: &CsrMatrix, f: &Tensor, w1: &Tensor, w2: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let adj = Rc::new(adj.clone());
    let x = tape.constant(f.clone());
    let a = tape.constant(w1.clone());
    let b = tape.constant(w2.clone());
    let out = gcn::convolve(&mut tape, &adj, x, [a, b]).unwrap();
    tape.value(out).clone()
}

#[test]
fn three_node_path_matches_hand_computation() {
    let mut g = AttentiveGraph::new(3);
    g.add_edge(0, 1, 1.0, None).unwrap();
    g.add_edge(1, 2, 1.0, None).unwrap();
    let s6 = 1.0 / 6f64.sqrt();
    let a = [[0.5, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, 0.5]];

    let f = [[1.0, -2.0], [0.5, 1.0], [-1.0, 3.0]];
    let w1 = [[1.0, -1.0], [0.5, 2.0]];
    let w2 = [[2.0], [-1.0]];

    let mm = |x: &[[f64; 3]; 3], y: &[[f64; 2]; 3]| -> [[f64; 2]; 3] {
        let mut o = [[0.0; 2]; 3];
        for i in 0..3 {
            for j in 0..2 {
                o[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
            }
        }
        o
    };
    let mut fw = [[0.0; 2]; 3];
    for i in 0..3 {
        for j in 0..2 {
            fw[i][j] = f[i][0] * w1[0][j] + f[i][1] * w1[1][j];
        }
    }
    let mut h = mm(&a, &fw);
    for row in &mut h {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let hw: Vec<f64> = h.iter().map(|r| r[0] * w2[0][0] + r[1] * w2[1][0]).collect();
    let want: Vec<f64> = (0..3).map(|i| (0..3).map(|k| a[i][k] * hw[k]).sum()).collect();

    let got = convolve_value(
        &g.normalize(),
        &Tensor::from_rows(&f).unwrap(),
        &Tensor::from_rows(&w1).unwrap(),
        &Tensor::from_rows(&w2).unwrap(),
    );
    for (i, w) in want.iter().enumerate() {
        assert!((got.get(i, 0) - w).abs() < 1e-10, "row {i}: {} vs {w}", got.get(i, 0));
    }
}

#[test]
fn identity_adjacency_reduces_to_a_per_node_mlp() {
    let mut r = rng(3);
    for _ in 0..10 {
        let g = random_weighted_graph(&mut r, 15);
        let g = icenet::graph::attach_attention(&g, AttentionScheme::A2, &AttentionContext::default()).unwrap();
        let n = g.n_nodes();
        let f = random_tensor(&mut r, n, 5, 1.0);
        let w1 = random_tensor(&mut r, 5, 4, 1.0);
        let w2 = random_tensor(&mut r, 4, 3, 1.0);
        let got = convolve_value(&g.normalize(), &f, &w1, &w2);
        let mlp = f.matmul(&w1).unwrap().map(|v| v.max(0.0)).matmul(&w2).unwrap();
        assert_eq!(got, mlp);
    }
}

#[test]
fn zero_weights_give_zero_outputs() {
    let mut r = rng(4);
    let g = random_weighted_graph(&mut r, 10);
    let n = g.n_nodes();
    let f = random_tensor(&mut r, n, 5, 1.0);
    let out = convolve_value(&g.normalize(), &f, &Tensor::zeros(5, 4), &Tensor::zeros(4, 3));
    assert_eq!(out, Tensor::zeros(n, 3));
}

fn features_for(
    params: &GcnParams,
    syn: &Tensor,
    ant: &Tensor,
    g_h: &AttentiveGraph,
    g_t: &AttentiveGraph,
    pairs: &[(usize, usize)],
) -> Tensor {
    let mut tape = Tape::new();
    let enc = Encoded {
        synonym: tape.constant(syn.clone()),
        antonym: tape.constant(ant.clone()),
    };
    let vars = params.register(&mut tape);
    let reps = gcn::gcn_forward(&mut tape, &vars, &enc, &Rc::new(g_h.normalize()), &Rc::new(g_t.normalize())).unwrap();
    let f = gcn::score_features(&mut tape, &reps, &pair_index(pairs)).unwrap();
    tape.value(f).clone()
}

fn permuted(g: &AttentiveGraph, perm: &[usize]) -> AttentiveGraph {
    let mut out = AttentiveGraph::new(g.n_nodes());
    for (a, b, e) in g.edges() {
        out.insert_edge(perm[a], perm[b], e.weight, e.support.clone()).unwrap();
    }
    out
}

fn permuted_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = t.clone();
    for (old, &new) in perm.iter().enumerate() {
        out.row_mut(new).copy_from_slice(t.row(old));
    }
    out
}

#[test]
fn node_order_does_not_change_pair_features() {
    let mut r = rng(21);
    let dims = GcnDims {
        input: 6,
        hidden: 5,
        output: 4,
    };
    for _ in 0..20 {
        let g_h = random_weighted_graph(&mut r, 12);
        let n = g_h.n_nodes().max(2);
        let g_h = if g_h.n_nodes() < 2 { AttentiveGraph::new(2) } else { g_h };
        let mut g_t = AttentiveGraph::new(n);
        for _ in 0..n {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            if a != b {
                g_t.add_edge(a, b, r.random_range(0.0..1.0), None).unwrap();
            }
        }
        let params = GcnParams::glorot(dims, &mut r);
        let syn = random_tensor(&mut r, n, 6, 1.0);
        let ant = random_tensor(&mut r, n, 6, 1.0);
        let pairs: Vec<(usize, usize)> = (0..8).map(|_| (r.random_range(0..n), r.random_range(0..n))).collect();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let base = features_for(&params, &syn, &ant, &g_h, &g_t, &pairs);
        let moved_pairs: Vec<_> = pairs.iter().map(|&(h, t)| (perm[h], perm[t])).collect();
        let moved = features_for(
            &params,
            &permuted_rows(&syn, &perm),
            &permuted_rows(&ant, &perm),
            &permuted(&g_h, &perm),
            &permuted(&g_t, &perm),
            &moved_pairs,
        );
        let diff = base.zip_map(&moved, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(diff < 1e-10, "features moved by {diff:e}");
    }
}

#[test]
fn features_match_an_independent_cosine() {
    let mut r = rng(5);
    let n = 7;
    let reps: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, n, 5, 1.0)).collect();
    let pairs: Vec<(usize, usize)> = (0..20).map(|_| (r.random_range(0..n), r.random_range(0..n))).collect();
    let mut tape = Tape::new();
    let v: Vec<_> = reps.iter().map(|t| tape.constant(t.clone())).collect();
    let node = NodeReps {
        hh: v[0],
        ht: v[1],
        th: v[2],
        tt: v[3],
    };
    let f = gcn::score_features(&mut tape, &node, &pair_index(&pairs)).unwrap();
    let f = tape.value(f);

    let cos = |a: &[f64], b: &[f64]| {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        ab / (aa.sqrt() * bb.sqrt())
    };
    let [hh, ht, th, tt] = [&reps[0], &reps[1], &reps[2], &reps[3]];
    for (i, &(h, t)) in pairs.iter().enumerate() {
        let want = [
            cos(th.row(h), tt.row(t)),
            cos(hh.row(h), ht.row(t)),
            cos(hh.row(h), tt.row(t)),
            cos(ht.row(t), th.row(h)),
        ];
        for (k, w) in want.iter().enumerate() {
            assert!((f.get(i, k) - w).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&f.get(i, k)));
        }
    }
}

#[test]
fn identical_and_orthogonal_representations() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [2.0, 2.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[[0.0, 3.0], [2.0, 2.0]]).unwrap());
    let c = tape.row_cosine(a, b).unwrap();
    let v = tape.value(c).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 1.0).abs() < 1e-15);
}
