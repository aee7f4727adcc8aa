// Shared by several test targets; each uses a different subset.
#![allow(dead_code)]

pub mod grad_cases;

use std::collections::{BTreeMap, BTreeSet};

use icenet::dataset::PairIndex;
use icenet::graph::{self, AttentiveGraph, PairScore, Provisional, Thresholds};
use icenet::synth::SynthConfig;
use icenet::tape::{Tape, Var};
use icenet::tensor::Tensor;
use icenet::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Gradients smaller than this in both the analytic and the numeric estimate
/// are compared absolutely instead of relatively.
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Central finite-difference check of every parameter entry of a scalar
/// function built on a tape.
pub fn fd_check<F>(params: &[Tensor], build: F) -> FdReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();

    let eval = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item().unwrap()
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut work = params.to_vec();
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let orig = params[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    report
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Dictionaries as `(head, tail)` sets, independent of list order.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct DictSets {
    pub syn_by_head: BTreeMap<usize, BTreeSet<(usize, usize)>>,
    pub ant_by_head: BTreeMap<usize, BTreeSet<(usize, usize)>>,
    pub syn_by_tail: BTreeMap<usize, BTreeSet<(usize, usize)>>,
    pub ant_by_tail: BTreeMap<usize, BTreeSet<(usize, usize)>>,
}

/// Straight transcription of the thresholding loop: antonym test first,
/// synonym test second, everything else dropped.
pub fn oracle_dicts(pairs: &[(usize, usize, f64)], t: Thresholds) -> DictSets {
    let mut d = DictSets::default();
    for &(h, tl, y) in pairs {
        if y >= t.antonym {
            d.ant_by_head.entry(h).or_default().insert((h, tl));
            d.ant_by_tail.entry(tl).or_default().insert((h, tl));
        } else if y <= t.synonym {
            d.syn_by_head.entry(h).or_default().insert((h, tl));
            d.syn_by_tail.entry(tl).or_default().insert((h, tl));
        }
    }
    d
}

/// Edge sets obtained by joining every two distinct heads sharing a tail
/// (head graph) and every two distinct tails sharing a head (tail graph).
pub type EdgeSet = BTreeSet<(usize, usize)>;

pub fn oracle_edges(d: &DictSets) -> (EdgeSet, EdgeSet) {
    let clique = |lists: &BTreeMap<usize, BTreeSet<(usize, usize)>>, pick: fn(&(usize, usize)) -> usize, out: &mut BTreeSet<(usize, usize)>| {
        for members in lists.values() {
            let nodes: Vec<usize> = members.iter().map(pick).collect();
            for &a in &nodes {
                for &b in &nodes {
                    if a < b {
                        out.insert((a, b));
                    }
                }
            }
        }
    };
    let mut head = BTreeSet::new();
    clique(&d.syn_by_tail, |p| p.0, &mut head);
    clique(&d.ant_by_tail, |p| p.0, &mut head);
    let mut tail = BTreeSet::new();
    clique(&d.syn_by_head, |p| p.1, &mut tail);
    clique(&d.ant_by_head, |p| p.1, &mut tail);
    (head, tail)
}

pub fn implementation_dicts(scores: &[PairScore]) -> DictSets {
    let d = graph::build_dicts(scores);
    let conv = |m: &BTreeMap<usize, Vec<usize>>| {
        m.iter()
            .map(|(&k, v)| (k, v.iter().map(|&i| (scores[i].head, scores[i].tail)).collect()))
            .collect()
    };
    DictSets {
        syn_by_head: conv(&d.syn_by_head),
        ant_by_head: conv(&d.ant_by_head),
        syn_by_tail: conv(&d.syn_by_tail),
        ant_by_tail: conv(&d.ant_by_tail),
    }
}

pub fn edge_set(g: &AttentiveGraph) -> BTreeSet<(usize, usize)> {
    g.edges().map(|(a, b, _)| (a, b)).collect()
}

pub fn scores_from(pairs: &[(usize, usize, f64)], t: Thresholds) -> Vec<PairScore> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(head, tail, score))| PairScore {
            pair: i,
            head,
            tail,
            score,
            kind: t.classify(score),
        })
        .collect()
}

/// Runs both the oracle and the implementation; returns a description of
/// the first disagreement.
pub fn compare_with_oracle(pairs: &[(usize, usize, f64)], n_nodes: usize, t: Thresholds) -> Result<(), String> {
    let scores = scores_from(pairs, t);
    let want = oracle_dicts(pairs, t);
    let got = implementation_dicts(&scores);
    if want != got {
        return Err(format!("dictionaries differ for {pairs:?}: oracle {want:?}, implementation {got:?}"));
    }
    let d = graph::build_dicts(&scores);
    let (g_h, g_t) = graph::build_graphs(&d, &scores, n_nodes).map_err(|e| e.to_string())?;
    let (e_h, e_t) = oracle_edges(&want);
    if edge_set(&g_h) != e_h {
        return Err(format!("head graph differs for {pairs:?}: oracle {e_h:?}, implementation {:?}", edge_set(&g_h)));
    }
    if edge_set(&g_t) != e_t {
        return Err(format!("tail graph differs for {pairs:?}: oracle {e_t:?}, implementation {:?}", edge_set(&g_t)));
    }
    Ok(())
}

/// A random instance with at most `max_pairs` pairs over at most 8 words.
/// Scores are drawn so that both thresholds and the overlap band are hit.
pub fn random_instance(rng: &mut ChaCha8Rng, max_pairs: usize) -> (Vec<(usize, usize, f64)>, usize) {
    let n_nodes = rng.random_range(2..=8);
    let n_pairs = rng.random_range(0..=max_pairs);
    let grid = [-0.5, 0.0, 0.05, 0.0999, 0.10, 0.12, 0.15, 0.1501, 0.3, 0.9];
    let pairs = (0..n_pairs)
        .map(|_| {
            let h = rng.random_range(0..n_nodes);
            let mut t = rng.random_range(0..n_nodes);
            if t == h {
                t = (t + 1) % n_nodes;
            }
            let y = if rng.random_bool(0.5) {
                grid[rng.random_range(0..grid.len())]
            } else {
                rng.random_range(-1.0..1.0)
            };
            (h, t, y)
        })
        .collect();
    (pairs, n_nodes)
}

/// Weights in [0, 1] on a random subset of node pairs.
pub fn random_weighted_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> AttentiveGraph {
    let n = rng.random_range(1..=max_nodes);
    let density = rng.random_range(0.0..0.6);
    let mut g = AttentiveGraph::new(n);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(density) {
                let w = if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.0..=1.0) };
                g.add_edge(a, b, w, None).unwrap();
            }
        }
    }
    g
}

pub fn provisional_counts(scores: &[PairScore]) -> [usize; 3] {
    let mut c = [0; 3];
    for s in scores {
        c[match s.kind {
            Provisional::ProbableAntonym => 0,
            Provisional::ProbableSynonym => 1,
            Provisional::Unassigned => 2,
        }] += 1;
    }
    c
}

/// The default synthetic corpus.
pub fn default_corpus() -> SynthConfig {
    SynthConfig::default()
}

/// Training config sized for the synthetic corpus.
pub fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        input_dim: SynthConfig::default().dim,
        ..TrainConfig::default()
    }
}

/// A small config for fast pipeline tests.
pub fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        input_dim: SynthConfig::default().dim,
        hidden_dim: 24,
        encoder_dim: 16,
        gcn_hidden_dim: 12,
        gcn_dim: 10,
        init_epochs: 30,
        epochs: 30,
        ..TrainConfig::default()
    }
}

pub fn pair_index(pairs: &[(usize, usize)]) -> PairIndex {
    PairIndex {
        heads: pairs.iter().map(|p| p.0).collect(),
        tails: pairs.iter().map(|p| p.1).collect(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
