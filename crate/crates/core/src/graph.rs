//! Transductive construction of the head-word and tail-word graphs.
//!
//! Every pair of the dataset, whatever its split, is scored with the
//! antonym-oriented encoder score `y* = tanh(⟨f_ant(h), f_syn(t)⟩)`. Labels are
//! never consulted. A pair with `y* ≥ antonym threshold` becomes a probable
//! antonym, otherwise a pair with `y* ≤ synonym threshold` becomes a probable
//! synonym, otherwise it is dropped. The antonym test runs first.
//!
//! In the head graph, heads sharing a tail are joined pairwise: heads of
//! probable synonyms of `t` are synonyms of each other, and so are heads of
//! probable antonyms of `t`. The tail graph is built the same way from heads'
//! tail lists. Both graphs span the whole vocabulary; words without a
//! qualifying neighbour stay isolated.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairIndex;
use crate::encoders::Projections;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::sparse::CsrMatrix;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub antonym: f64,
    pub synonym: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            antonym: 0.10,
            synonym: 0.15,
        }
    }
}

impl Thresholds {
    pub fn classify(&self, score: f64) -> Provisional {
        if score >= self.antonym {
            Provisional::ProbableAntonym
        } else if score <= self.synonym {
            Provisional::ProbableSynonym
        } else {
            Provisional::Unassigned
        }
    }

    /// Distance from `score` to the nearer threshold.
    pub fn distance(&self, score: f64) -> f64 {
        (score - self.antonym).abs().min((score - self.synonym).abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provisional {
    ProbableAntonym,
    ProbableSynonym,
    Unassigned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    /// Position of the pair in the scored list.
    pub pair: usize,
    pub head: usize,
    pub tail: usize,
    pub score: f64,
    pub kind: Provisional,
}

/// Scores every pair with the antonym-oriented encoder score.
pub fn score_pairs(proj: &Projections, pairs: &PairIndex, thresholds: Thresholds, exec: Execution) -> Vec<PairScore> {
    par::map_range(exec, pairs.len(), |i| {
        let (head, tail) = (pairs.heads[i], pairs.tails[i]);
        let score = proj.antonym_score(head, tail);
        PairScore {
            pair: i,
            head,
            tail,
            score,
            kind: thresholds.classify(score),
        }
    })
}

/// Negates the score of `round(fraction · n)` randomly chosen pairs and
/// reclassifies them. Used to simulate an unreliable scoring model.
pub fn inject_score_noise(scores: &mut [PairScore], fraction: f64, thresholds: Thresholds, seed: u64) {
    let n = ((scores.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &order[..n] {
        let s = &mut scores[i];
        s.score = -s.score;
        s.kind = thresholds.classify(s.score);
    }
}

/// Probable synonym/antonym pairs keyed by head word and by tail word.
/// Values are positions into the score list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborDicts {
    pub syn_by_head: BTreeMap<usize, Vec<usize>>,
    pub ant_by_head: BTreeMap<usize, Vec<usize>>,
    pub syn_by_tail: BTreeMap<usize, Vec<usize>>,
    pub ant_by_tail: BTreeMap<usize, Vec<usize>>,
}

impl NeighborDicts {
    pub fn antonym_entries(&self) -> usize {
        self.ant_by_head.values().map(Vec::len).sum()
    }

    pub fn synonym_entries(&self) -> usize {
        self.syn_by_head.values().map(Vec::len).sum()
    }
}

pub fn build_dicts(scores: &[PairScore]) -> NeighborDicts {
    let mut d = NeighborDicts::default();
    for (i, s) in scores.iter().enumerate() {
        let (by_head, by_tail) = match s.kind {
            Provisional::ProbableAntonym => (&mut d.ant_by_head, &mut d.ant_by_tail),
            Provisional::ProbableSynonym => (&mut d.syn_by_head, &mut d.syn_by_tail),
            Provisional::Unassigned => continue,
        };
        by_head.entry(s.head).or_default().push(i);
        by_tail.entry(s.tail).or_default().push(i);
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeInfo {
    pub weight: f64,
    /// Scores of the two pairs behind each time the edge was generated.
    pub support: Vec<(f64, f64)>,
}

/// Undirected weighted graph over vocabulary rows, stored once per edge with
/// the smaller endpoint first.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentiveGraph {
    n_nodes: usize,
    edges: BTreeMap<(usize, usize), EdgeInfo>,
}

impl AttentiveGraph {
    pub fn new(n_nodes: usize) -> Self {
        AttentiveGraph {
            n_nodes,
            edges: BTreeMap::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &EdgeInfo)> {
        self.edges.iter().map(|(&(a, b), e)| (a, b, e))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&ordered(a, b))
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.edges.get(&ordered(a, b)).map(|e| e.weight)
    }

    /// Adds or merges an edge; merged edges keep the larger weight.
    pub fn add_edge(&mut self, a: usize, b: usize, weight: f64, support: Option<(f64, f64)>) -> Result<()> {
        if a == b {
            return Err(Error::Contract(format!("self-loop on node {a}")));
        }
        if a >= self.n_nodes || b >= self.n_nodes {
            return Err(Error::dim("add_edge", &[self.n_nodes], &[a.max(b)]));
        }
        if weight.is_nan() || weight < 0.0 {
            return Err(Error::Contract(format!("edge weight {weight} is negative")));
        }
        let e = self.edges.entry(ordered(a, b)).or_insert(EdgeInfo {
            weight,
            support: Vec::new(),
        });
        e.weight = e.weight.max(weight);
        e.support.extend(support);
        Ok(())
    }

    /// Stores an edge exactly as given, replacing any existing one.
    pub fn insert_edge(&mut self, a: usize, b: usize, weight: f64, support: Vec<(f64, f64)>) -> Result<()> {
        self.add_edge(a, b, weight, None)?;
        self.edges.insert(ordered(a, b), EdgeInfo { weight, support });
        Ok(())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(a, b) in self.edges.keys() {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Copy with every edge weight replaced by `f(a, b, edge)`.
    fn reweighted(&self, mut f: impl FnMut(usize, usize, &EdgeInfo) -> f64) -> AttentiveGraph {
        let edges = self
            .edges
            .iter()
            .map(|(&(a, b), e)| {
                let weight = f(a, b, e);
                (
                    (a, b),
                    EdgeInfo {
                        weight,
                        support: e.support.clone(),
                    },
                )
            })
            .collect();
        AttentiveGraph {
            n_nodes: self.n_nodes,
            edges,
        }
    }

    /// `D̄^{-1/2}(ξ + I)D̄^{-1/2}` with `D̄` the degree matrix of `ξ + I`.
    pub fn normalize(&self) -> CsrMatrix {
        let mut degree = vec![1.0; self.n_nodes];
        for (&(a, b), e) in &self.edges {
            degree[a] += e.weight;
            degree[b] += e.weight;
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut triplets: Vec<(usize, usize, f64)> = (0..self.n_nodes).map(|i| (i, i, 1.0 / degree[i])).collect();
        for (&(a, b), e) in &self.edges {
            if e.weight == 0.0 {
                continue;
            }
            let v = e.weight * inv_sqrt[a] * inv_sqrt[b];
            triplets.push((a, b, v));
            triplets.push((b, a, v));
        }
        CsrMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets).expect("indices checked on insert")
    }

    pub fn stats(&self) -> GraphStats {
        let deg = self.degrees();
        let mut histogram = BTreeMap::new();
        for &d in &deg {
            *histogram.entry(d).or_insert(0) += 1;
        }
        let weights: Vec<f64> = self.edges.values().map(|e| e.weight).collect();
        let (min, max, mean) = if weights.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                weights.iter().cloned().fold(f64::INFINITY, f64::min),
                weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                weights.iter().sum::<f64>() / weights.len() as f64,
            )
        };
        GraphStats {
            nodes: self.n_nodes,
            connected_nodes: deg.iter().filter(|&&d| d > 0).count(),
            edges: self.edges.len(),
            degree_histogram: histogram,
            weight_min: min,
            weight_mean: mean,
            weight_max: max,
        }
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub connected_nodes: usize,
    pub edges: usize,
    pub degree_histogram: BTreeMap<usize, usize>,
    pub weight_min: f64,
    pub weight_mean: f64,
    pub weight_max: f64,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes\t{}", self.nodes)?;
        writeln!(f, "connected_nodes\t{}", self.connected_nodes)?;
        writeln!(f, "edges\t{}", self.edges)?;
        writeln!(
            f,
            "weights(min/mean/max)\t{:.4}\t{:.4}\t{:.4}",
            self.weight_min, self.weight_mean, self.weight_max
        )?;
        write!(f, "degree_histogram")?;
        for (d, c) in &self.degree_histogram {
            write!(f, "\t{d}:{c}")?;
        }
        Ok(())
    }
}

/// Builds the head-word graph and the tail-word graph with unit weights.
pub fn build_graphs(dicts: &NeighborDicts, scores: &[PairScore], n_nodes: usize) -> Result<(AttentiveGraph, AttentiveGraph)> {
    let mut g_head = AttentiveGraph::new(n_nodes);
    let mut g_tail = AttentiveGraph::new(n_nodes);
    for lists in [&dicts.syn_by_tail, &dicts.ant_by_tail] {
        for members in lists.values() {
            connect(&mut g_head, members, scores, |s| s.head)?;
        }
    }
    for lists in [&dicts.syn_by_head, &dicts.ant_by_head] {
        for members in lists.values() {
            connect(&mut g_tail, members, scores, |s| s.tail)?;
        }
    }
    Ok((g_head, g_tail))
}

fn connect(g: &mut AttentiveGraph, members: &[usize], scores: &[PairScore], node: impl Fn(&PairScore) -> usize) -> Result<()> {
    for (i, &p) in members.iter().enumerate() {
        for &q in &members[i + 1..] {
            let (a, b) = (node(&scores[p]), node(&scores[q]));
            if a != b {
                g.add_edge(a, b, 1.0, Some((scores[p].score, scores[q].score)))?;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum AttentionScheme {
    /// Uniform random weights in (0.1, 0.9).
    A1,
    /// No propagation: the adjacency collapses to the identity.
    A2,
    /// Cosine of the raw embeddings.
    A3,
    /// Cosine of the synonym-encoder projections.
    A4,
    /// A4, halved on edges backed only by scores near a threshold.
    #[default]
    A5,
}

impl AttentionScheme {
    pub const ALL: [AttentionScheme; 5] = [
        AttentionScheme::A1,
        AttentionScheme::A2,
        AttentionScheme::A3,
        AttentionScheme::A4,
        AttentionScheme::A5,
    ];
}

impl std::str::FromStr for AttentionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(AttentionScheme::A1),
            "A2" => Ok(AttentionScheme::A2),
            "A3" => Ok(AttentionScheme::A3),
            "A4" => Ok(AttentionScheme::A4),
            "A5" => Ok(AttentionScheme::A5),
            other => Err(Error::Config(format!("unknown attention scheme {other:?}"))),
        }
    }
}

impl fmt::Display for AttentionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Inputs some attention schemes need.
#[derive(Clone, Copy, Debug)]
pub struct AttentionContext<'a> {
    pub embeddings: Option<&'a Tensor>,
    pub synonym_projection: Option<&'a Tensor>,
    pub thresholds: Thresholds,
    pub band: f64,
    pub seed: u64,
}

impl Default for AttentionContext<'_> {
    fn default() -> Self {
        AttentionContext {
            embeddings: None,
            synonym_projection: None,
            thresholds: Thresholds::default(),
            band: 0.05,
            seed: 0,
        }
    }
}

/// Replaces the edge weights of `graph` according to `scheme`. Weights are
/// fixed once assigned.
pub fn attach_attention(graph: &AttentiveGraph, scheme: AttentionScheme, ctx: &AttentionContext<'_>) -> Result<AttentiveGraph> {
    let need = |t: Option<&Tensor>, what: &str| -> Result<Tensor> {
        let t = t.ok_or_else(|| Error::Config(format!("attention scheme {scheme} needs {what}")))?;
        if t.rows() != graph.n_nodes() {
            return Err(Error::dim("attach_attention", &[graph.n_nodes()], &t.shape()));
        }
        Ok(t.clone())
    };
    let clamped_cosine = |m: &Tensor, a: usize, b: usize| tensor::cosine(m.row(a), m.row(b)).clamp(0.0, 1.0);
    Ok(match scheme {
        AttentionScheme::A1 => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            graph.reweighted(|_, _, _| rng.random_range(0.1..0.9))
        }
        AttentionScheme::A2 => graph.reweighted(|_, _, _| 0.0),
        AttentionScheme::A3 => {
            let m = need(ctx.embeddings, "the embedding matrix")?;
            graph.reweighted(|a, b, _| clamped_cosine(&m, a, b))
        }
        AttentionScheme::A4 | AttentionScheme::A5 => {
            let m = need(ctx.synonym_projection, "the synonym-encoder projections")?;
            let halve = scheme == AttentionScheme::A5;
            graph.reweighted(|a, b, e| {
                let w = clamped_cosine(&m, a, b);
                if halve && !confidently_supported(e, ctx.thresholds, ctx.band) {
                    w / 2.0
                } else {
                    w
                }
            })
        }
    })
}

/// True when some generation of the edge came from two pairs whose scores
/// both sit at least `band` away from every threshold. Edges without
/// recorded support count as confident.
pub fn confidently_supported(e: &EdgeInfo, thresholds: Thresholds, band: f64) -> bool {
    e.support.is_empty()
        || e
            .support
            .iter()
            .any(|&(s, t)| thresholds.distance(s) >= band && thresholds.distance(t) >= band)
}

/// Writes `graph` as a node-index header followed by `u<TAB>v<TAB>weight` lines.
pub fn write_edge_list(graph: &AttentiveGraph, words: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if words.len() != graph.n_nodes() {
        return Err(Error::dim("write_edge_list", &[graph.n_nodes()], &[words.len()]));
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(out, "# nodes\t{}", graph.n_nodes()).map_err(io)?;
    for (i, w) in words.iter().enumerate() {
        writeln!(out, "{i}\t{w}").map_err(io)?;
    }
    writeln!(out, "# edges\t{}", graph.n_edges()).map_err(io)?;
    for (a, b, e) in graph.edges() {
        writeln!(out, "{a}\t{b}\t{}", e.weight).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a graph written by [`write_edge_list`]. Edge support is not stored
/// in the file and comes back empty.
pub fn read_edge_list(path: impl AsRef<Path>) -> Result<(Vec<String>, AttentiveGraph)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header_count = |line: Option<(usize, &str)>, tag: &str| -> Result<usize> {
        let (i, l) = line.ok_or_else(|| Error::format(path, 0, format!("missing {tag} header")))?;
        l.strip_prefix(&format!("# {tag}\t"))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::format(path, i + 1, format!("expected '# {tag}<TAB>count'")))
    };
    let n = header_count(lines.next(), "nodes")?;
    let mut words = Vec::with_capacity(n);
    for k in 0..n {
        let (i, l) = lines.next().ok_or_else(|| Error::format(path, 0, "truncated node list"))?;
        let (idx, word) = l
            .split_once('\t')
            .ok_or_else(|| Error::format(path, i + 1, "expected index<TAB>word"))?;
        if idx.parse::<usize>().ok() != Some(k) {
            return Err(Error::format(path, i + 1, format!("expected node index {k}")));
        }
        words.push(word.to_string());
    }
    let m = header_count(lines.next(), "edges")?;
    let mut g = AttentiveGraph::new(n);
    for _ in 0..m {
        let (i, l) = lines.next().ok_or_else(|| Error::format(path, 0, "truncated edge list"))?;
        let f: Vec<&str> = l.split('\t').collect();
        let bad = || Error::format(path, i + 1, "expected u<TAB>v<TAB>weight");
        if f.len() != 3 {
            return Err(bad());
        }
        let a: usize = f[0].parse().map_err(|_| bad())?;
        let b: usize = f[1].parse().map_err(|_| bad())?;
        let w: f64 = f[2].parse().map_err(|_| bad())?;
        g.add_edge(a, b, w, None)
            .map_err(|e| Error::format(path, i + 1, e.to_string()))?;
    }
    Ok((words, g))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub thresholds: Thresholds,
    pub scheme: AttentionScheme,
    pub band: f64,
    pub seed: u64,
    /// Fraction of pair scores flipped before thresholding.
    pub score_noise: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            thresholds: Thresholds::default(),
            scheme: AttentionScheme::A5,
            band: 0.05,
            seed: 0,
            score_noise: 0.0,
        }
    }
}

/// Everything produced by graph construction.
#[derive(Clone, Debug)]
pub struct GraphBuild {
    pub scores: Vec<PairScore>,
    pub dicts: NeighborDicts,
    pub head_graph: AttentiveGraph,
    pub tail_graph: AttentiveGraph,
}

impl GraphBuild {
    pub fn normalized(&self) -> (CsrMatrix, CsrMatrix) {
        (self.head_graph.normalize(), self.tail_graph.normalize())
    }
}

/// Scores `pairs` with the trained encoders, thresholds them, builds both
/// graphs and attaches attention weights.
pub fn construct(
    proj: &Projections,
    embeddings: &Tensor,
    pairs: &PairIndex,
    cfg: &GraphConfig,
    exec: Execution,
) -> Result<GraphBuild> {
    let n = embeddings.rows();
    let mut scores = score_pairs(proj, pairs, cfg.thresholds, exec);
    if cfg.score_noise > 0.0 {
        inject_score_noise(&mut scores, cfg.score_noise, cfg.thresholds, cfg.seed ^ 0x5eed_f00d);
    }
    let dicts = build_dicts(&scores);
    let (g_h, g_t) = build_graphs(&dicts, &scores, n)?;
    let ctx = AttentionContext {
        embeddings: Some(embeddings),
        synonym_projection: Some(&proj.synonym),
        thresholds: cfg.thresholds,
        band: cfg.band,
        seed: cfg.seed,
    };
    let head_graph = attach_attention(&g_h, cfg.scheme, &ctx)?;
    let tail_graph = attach_attention(
        &g_t,
        cfg.scheme,
        &AttentionContext {
            seed: cfg.seed.wrapping_add(1),
            ..ctx
        },
    )?;
    Ok(GraphBuild {
        scores,
        dicts,
        head_graph,
        tail_graph,
    })
}
