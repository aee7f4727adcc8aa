//! Two-phase training, baselines, multi-seed suites and ablations.
//!
//! 1. Both encoders are trained on `L1 + L2` over the train split, giving
//!    the preliminary scorer.
//! 2. The scorer rates every pair of every split (labels are never read),
//!    the head and tail graphs are built and their attention weights fixed.
//! 3. Encoders, graph convolutions and classifier are optimized jointly on
//!    `L1 + L2 + L3` with early stopping on dev F1. The adjacencies are
//!    never touched again.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{sample_negatives, Label, PairIndex, RelationPair, SplitDataset};
use crate::embeddings::{EmbeddingTable, OovMode};
use crate::encoders::{self, EncoderDims, EncoderParams, EncoderVars, Encoded};
use crate::error::{Error, Result};
use crate::gcn::{self, ClassifierVars, GcnDims, GcnParams, GcnVars, NodeReps};
use crate::graph::{self, AttentionScheme, AttentiveGraph, GraphConfig, GraphStats, Provisional, Thresholds};
use crate::metrics::{self, AggregateReport, EvalReport};
use crate::optim::{Adam, AdamConfig};
use crate::par::{self, Execution};
use crate::sparse::CsrMatrix;
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Same pipeline over random input vectors.
    Baseline1RandomVectors,
    /// No graphs: the classifier reads cosines of the encoder outputs.
    Baseline2NoGcn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Baseline1RandomVectors, Variant::Baseline2NoGcn];

    pub fn uses_graphs(self) -> bool {
        self != Variant::Baseline2NoGcn
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Baseline1RandomVectors => "baseline1-random-vectors",
            Variant::Baseline2NoGcn => "baseline2-no-gcn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Every training knob. Config files are flat `key = value` TOML using
/// these field names; missing keys keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs of the preliminary encoder-only phase.
    pub init_epochs: usize,
    /// Maximum epochs of the joint phase.
    pub epochs: usize,
    /// Joint-phase epochs in which neither dev F1 nor dev cross-entropy
    /// improves before stopping.
    pub patience: usize,
    /// Training pairs per optimizer step; 0 means full batch.
    pub batch_size: usize,
    pub synonym_margin: f64,
    pub antonym_margin: f64,
    pub syn_threshold: f64,
    pub ant_threshold: f64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub encoder_dim: usize,
    pub gcn_hidden_dim: usize,
    pub gcn_dim: usize,
    pub activation: Activation,
    pub scheme: AttentionScheme,
    pub attention_band: f64,
    pub negatives_per_positive: usize,
    pub variant: Variant,
    /// Re-initialize the encoders before the joint phase instead of
    /// continuing from the preliminary ones.
    pub cold_start: bool,
    /// Fraction of preliminary pair scores negated before graph building.
    pub score_noise: f64,
    /// Fail on words missing from the embedding table instead of drawing
    /// seeded random vectors for them.
    pub strict_oov: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_epochs: 100,
            epochs: 200,
            patience: 20,
            batch_size: 0,
            synonym_margin: 0.9,
            antonym_margin: 0.9,
            syn_threshold: 0.15,
            ant_threshold: 0.10,
            input_dim: 300,
            hidden_dim: 150,
            encoder_dim: 80,
            gcn_hidden_dim: 70,
            gcn_dim: 60,
            activation: Activation::Tanh,
            scheme: AttentionScheme::A5,
            attention_band: 0.05,
            negatives_per_positive: 1,
            variant: Variant::Full,
            cold_start: false,
            score_noise: 0.0,
            strict_oov: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_dim", self.encoder_dim),
            ("gcn_hidden_dim", self.gcn_hidden_dim),
            ("gcn_dim", self.gcn_dim),
            ("negatives_per_positive", self.negatives_per_positive),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, m) in [("synonym_margin", self.synonym_margin), ("antonym_margin", self.antonym_margin)] {
            if !(m > 0.0 && m <= 1.0) {
                return bad(format!("{name} {m} outside (0, 1]"));
            }
        }
        if !(self.syn_threshold.is_finite() && self.ant_threshold.is_finite()) {
            return bad("thresholds must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.score_noise) {
            return bad(format!("score_noise {} outside [0, 1]", self.score_noise));
        }
        if self.attention_band.is_nan() || self.attention_band < 0.0 {
            return bad(format!("attention_band {} must be nonnegative", self.attention_band));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            antonym: self.ant_threshold,
            synonym: self.syn_threshold,
        }
    }

    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims {
            input: self.input_dim,
            hidden: self.hidden_dim,
            output: self.encoder_dim,
        }
    }

    pub fn gcn_dims(&self) -> GcnDims {
        GcnDims {
            input: self.encoder_dim,
            hidden: self.gcn_hidden_dim,
            output: self.gcn_dim,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            thresholds: self.thresholds(),
            scheme: self.scheme,
            band: self.attention_band,
            seed: self.seed,
            score_noise: self.score_noise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1 for the encoder-only phase, 3 for the joint phase.
    pub phase: u8,
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    /// Dev F1 after the epoch; joint phase only.
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub head: GraphStats,
    pub tail: GraphStats,
    pub probable_antonyms: usize,
    pub probable_synonyms: usize,
    pub unassigned: usize,
    /// Mean preliminary score over gold antonym and gold synonym pairs;
    /// diagnostics only, never fed back into training.
    pub mean_score_antonym: f64,
    pub mean_score_synonym: f64,
    /// Adjacency checksums right after construction and after training.
    pub checksum_before: [u64; 2],
    pub checksum_after: [u64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub losses: Vec<EpochLoss>,
    /// Joint-phase epoch whose parameters were kept.
    pub best_epoch: usize,
    pub dev: EvalReport,
    pub test: EvalReport,
    pub graph: Option<GraphSummary>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl RunRecord {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path.as_ref())
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A trained pipeline over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    inputs: Rc<Tensor>,
    pub encoders: EncoderParams,
    pub gcn: GcnParams,
    graphs: Option<(AttentiveGraph, AttentiveGraph)>,
    adjacency: Option<(Rc<CsrMatrix>, Rc<CsrMatrix>)>,
}

struct Forward {
    enc_vars: EncoderVars,
    enc: Encoded,
}

struct Head {
    gcn_vars: Option<GcnVars>,
    cls: ClassifierVars,
    reps: NodeReps,
}

impl Model {
    pub fn new(
        variant: Variant,
        vocab: Vec<String>,
        inputs: Tensor,
        encoders: EncoderParams,
        gcn: GcnParams,
        graphs: Option<(AttentiveGraph, AttentiveGraph)>,
    ) -> Result<Self> {
        if inputs.rows() != vocab.len() {
            return Err(Error::dim("model inputs", &[vocab.len()], &inputs.shape()));
        }
        if inputs.cols() != encoders.dims().input {
            return Err(Error::dim("model inputs", &[encoders.dims().input], &[inputs.cols()]));
        }
        if variant.uses_graphs() != graphs.is_some() {
            return Err(Error::Contract(format!("variant {variant} and graph presence disagree")));
        }
        if let Some((g_h, g_t)) = &graphs {
            if g_h.n_nodes() != vocab.len() || g_t.n_nodes() != vocab.len() {
                return Err(Error::dim("model graphs", &[vocab.len()], &[g_h.n_nodes(), g_t.n_nodes()]));
            }
        }
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let adjacency = graphs
            .as_ref()
            .map(|(g_h, g_t)| (Rc::new(g_h.normalize()), Rc::new(g_t.normalize())));
        Ok(Model {
            variant,
            vocab,
            index,
            inputs: Rc::new(inputs),
            encoders,
            gcn,
            graphs,
            adjacency,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn graphs(&self) -> Option<(&AttentiveGraph, &AttentiveGraph)> {
        self.graphs.as_ref().map(|(a, b)| (a, b))
    }

    pub fn adjacency_checksums(&self) -> Option<[u64; 2]> {
        self.adjacency.as_ref().map(|(a, b)| [a.checksum(), b.checksum()])
    }

    pub fn pair_index(&self, pairs: &[RelationPair]) -> Result<PairIndex> {
        let lookup = |w: &str| {
            self.index
                .get(w)
                .copied()
                .ok_or_else(|| Error::MissingWord(w.to_string()))
        };
        let mut idx = PairIndex::default();
        for p in pairs {
            idx.heads.push(lookup(&p.head)?);
            idx.tails.push(lookup(&p.tail)?);
        }
        Ok(idx)
    }

    fn encode(&self, tape: &mut Tape) -> Result<Forward> {
        let x = tape.leaf(Rc::clone(&self.inputs), false);
        let enc_vars = self.encoders.register(tape);
        let enc = enc_vars.encode(tape, x)?;
        Ok(Forward { enc_vars, enc })
    }

    fn head(&self, tape: &mut Tape, enc: &Encoded) -> Result<Head> {
        match &self.adjacency {
            Some((a_h, a_t)) => {
                let vars = self.gcn.register(tape);
                let reps = gcn::gcn_forward(tape, &vars, enc, a_h, a_t)?;
                Ok(Head {
                    gcn_vars: Some(vars),
                    cls: vars.classifier,
                    reps,
                })
            }
            None => Ok(Head {
                gcn_vars: None,
                cls: ClassifierVars::register(&self.gcn.classifier, tape),
                reps: NodeReps::without_graph(enc),
            }),
        }
    }

    /// The `pairs × 4` feature matrix.
    pub fn features(&self, pairs: &PairIndex) -> Result<Tensor> {
        let mut tape = Tape::new();
        let fwd = self.encode(&mut tape)?;
        let head = self.head(&mut tape, &fwd.enc)?;
        let f = gcn::score_features(&mut tape, &head.reps, pairs)?;
        Ok(tape.value(f).clone())
    }

    /// Classifier logits and mean cross-entropy (when labels are given).
    pub fn logits(&self, pairs: &PairIndex, labels: Option<&[Label]>) -> Result<(Tensor, Option<f64>)> {
        let mut tape = Tape::new();
        let fwd = self.encode(&mut tape)?;
        let head = self.head(&mut tape, &fwd.enc)?;
        let f = gcn::score_features(&mut tape, &head.reps, pairs)?;
        let logits = head.cls.logits(&mut tape, f)?;
        let loss = match labels {
            Some(l) => {
                let idx: Vec<usize> = l.iter().map(|x| x.index()).collect();
                let v = tape.softmax_cross_entropy(logits, idx)?;
                Some(tape.value(v).item()?)
            }
            None => None,
        };
        Ok((tape.value(logits).clone(), loss))
    }

    pub fn predict(&self, pairs: &PairIndex) -> Result<Vec<Label>> {
        Ok(gcn::predictions(&self.logits(pairs, None)?.0))
    }

    pub fn evaluate(&self, pairs: &[RelationPair]) -> Result<EvalReport> {
        Ok(self.evaluate_with_loss(pairs)?.0)
    }

    fn evaluate_with_loss(&self, pairs: &[RelationPair]) -> Result<(EvalReport, f64)> {
        let idx = self.pair_index(pairs)?;
        let gold: Vec<Label> = pairs.iter().map(|p| p.label).collect();
        let (logits, loss) = self.logits(&idx, Some(&gold))?;
        let pred = gcn::predictions(&logits);
        let report = metrics::evaluate(&pred.into_iter().zip(gold).collect::<Vec<_>>())?;
        Ok((report, loss.expect("labels given")))
    }

    pub fn to_checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("variant".into(), self.variant.to_string());
        ck.meta.insert("activation".into(), self.encoders.activation.to_string());
        ck.meta.insert("synonym_margin".into(), self.encoders.synonym_margin.to_string());
        ck.meta.insert("antonym_margin".into(), self.encoders.antonym_margin.to_string());
        ck.meta.insert(
            "config".into(),
            serde_json::to_string(config).expect("config always serializes"),
        );
        ck.vocab = self.vocab.clone();
        ck.tensors.insert("inputs".into(), (*self.inputs).clone());
        for (name, t) in self.encoders.named().into_iter().chain(self.gcn.named()) {
            ck.tensors.insert(name, t.clone());
        }
        if let Some((g_h, g_t)) = &self.graphs {
            ck.graphs.insert("head".into(), g_h.clone());
            ck.graphs.insert("tail".into(), g_t.clone());
        }
        ck
    }

    /// Rebuilds a model and the config it was trained with.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, TrainConfig)> {
        let config: TrainConfig =
            serde_json::from_str(ck.meta("config")?).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        let variant: Variant = ck.meta("variant")?.parse()?;
        let activation: Activation = ck.meta("activation")?.parse()?;
        let margin = |k: &str| -> Result<f64> {
            ck.meta(k)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint meta {k} is not a number")))
        };
        let w_in = ck.tensor("enc_syn.w_in")?;
        let w_out = ck.tensor("enc_syn.w_out")?;
        let mut encoders = EncoderParams::zeros(EncoderDims {
            input: w_in.rows(),
            hidden: w_in.cols(),
            output: w_out.cols(),
        })
        .with_margins(margin("synonym_margin")?, margin("antonym_margin")?)?
        .with_activation(activation);
        copy_named(encoders.named_mut(), ck)?;
        let w1 = ck.tensor("gcn_hh.w1")?;
        let w2 = ck.tensor("gcn_hh.w2")?;
        let mut gcn = GcnParams::zeros(GcnDims {
            input: w1.rows(),
            hidden: w1.cols(),
            output: w2.cols(),
        });
        copy_named(gcn.named_mut(), ck)?;
        let graphs = match (ck.graphs.get("head"), ck.graphs.get("tail")) {
            (Some(h), Some(t)) => Some((h.clone(), t.clone())),
            _ => None,
        };
        let model = Model::new(
            variant,
            ck.vocab.clone(),
            ck.tensor("inputs")?.clone(),
            encoders,
            gcn,
            graphs,
        )?;
        Ok((model, config))
    }
}

fn copy_named(targets: Vec<(String, &mut Tensor)>, ck: &Checkpoint) -> Result<()> {
    for (name, t) in targets {
        let src = ck.tensor(&name)?;
        if src.shape() != t.shape() {
            return Err(Error::dim("checkpoint tensor", &t.shape(), &src.shape()));
        }
        *t = src.clone();
    }
    Ok(())
}

/// A finished run: its record and the kept parameters.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub record: RunRecord,
    pub model: Model,
}

#[derive(Clone, Debug, Default)]
struct Batch {
    syn_pos: PairIndex,
    syn_neg: PairIndex,
    ant_pos: PairIndex,
    ant_neg: PairIndex,
    pairs: PairIndex,
    labels: Vec<Label>,
}

/// Negatives of one relation, grouped by the train row they corrupt.
fn negatives_by_source(ds: &SplitDataset, relation: Label, k: usize, seed: u64) -> Result<Vec<Vec<(usize, usize)>>> {
    let mut grouped = vec![Vec::new(); ds.train.len()];
    for n in sample_negatives(ds, relation, k, seed)? {
        let idx = ds.indices([(n.head.as_str(), n.tail.as_str())])?;
        grouped[n.source].push((idx.heads[0], idx.tails[0]));
    }
    Ok(grouped)
}

fn push(idx: &mut PairIndex, (h, t): (usize, usize)) {
    idx.heads.push(h);
    idx.tails.push(t);
}

/// Derives an independent seed for one purpose of one run.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_INIT: u64 = 1;
const TAG_NEG_SYN: u64 = 2;
const TAG_NEG_ANT: u64 = 3;
const TAG_SHUFFLE: u64 = 4;
const TAG_HEAD_INIT: u64 = 5;
const TAG_COLD: u64 = 6;
const TAG_RANDOM_VECTORS: u64 = 7;

/// Training batches for one phase. Negatives are drawn once per phase.
struct Batcher {
    train: PairIndex,
    labels: Vec<Label>,
    syn_neg: Vec<Vec<(usize, usize)>>,
    ant_neg: Vec<Vec<(usize, usize)>>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(ds: &SplitDataset, cfg: &TrainConfig, phase: u64) -> Result<Self> {
        let k = cfg.negatives_per_positive;
        Ok(Batcher {
            train: ds.pair_index(&ds.train)?,
            labels: ds.train.iter().map(|p| p.label).collect(),
            syn_neg: negatives_by_source(ds, Label::Synonym, k, derive_seed(cfg.seed, TAG_NEG_SYN + 16 * phase))?,
            ant_neg: negatives_by_source(ds, Label::Antonym, k, derive_seed(cfg.seed, TAG_NEG_ANT + 16 * phase))?,
            batch_size: cfg.batch_size,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_SHUFFLE + 16 * phase)),
        })
    }

    fn epoch(&mut self) -> Vec<Batch> {
        let mut rows: Vec<usize> = (0..self.train.len()).collect();
        let chunk = if self.batch_size == 0 {
            rows.len().max(1)
        } else {
            rows.shuffle(&mut self.rng);
            self.batch_size
        };
        rows.chunks(chunk)
            .map(|chunk| {
                let mut b = Batch::default();
                for &r in chunk {
                    let pair = (self.train.heads[r], self.train.tails[r]);
                    let label = self.labels[r];
                    push(&mut b.pairs, pair);
                    b.labels.push(label);
                    let (pos, neg, negs) = match label {
                        Label::Synonym => (&mut b.syn_pos, &mut b.syn_neg, &self.syn_neg[r]),
                        Label::Antonym => (&mut b.ant_pos, &mut b.ant_neg, &self.ant_neg[r]),
                    };
                    push(pos, pair);
                    for &n in negs {
                        push(neg, n);
                    }
                }
                b
            })
            .collect()
    }
}

#[derive(Clone, Copy, Default)]
struct Losses {
    l1: f64,
    l2: f64,
    l3: f64,
}

impl Losses {
    fn add(&mut self, o: Losses) {
        self.l1 += o.l1;
        self.l2 += o.l2;
        self.l3 += o.l3;
    }

    fn record(self, phase: u8, epoch: usize) -> EpochLoss {
        EpochLoss {
            phase,
            epoch,
            l1: self.l1,
            l2: self.l2,
            l3: self.l3,
            total: self.l1 + self.l2 + self.l3,
            dev_f1: None,
        }
    }
}

/// Encoder margin losses of a batch; relations without positives in the
/// batch contribute nothing.
fn margin_terms(tape: &mut Tape, enc: &Encoded, b: &Batch, params: &EncoderParams) -> Result<(Option<Var>, Option<Var>)> {
    let l1 = if b.syn_pos.is_empty() {
        None
    } else {
        Some(encoders::synonym_loss(tape, enc, &b.syn_pos, &b.syn_neg, params.synonym_margin)?)
    };
    let l2 = if b.ant_pos.is_empty() {
        None
    } else {
        Some(encoders::antonym_loss(tape, enc, &b.ant_pos, &b.ant_neg, params.antonym_margin)?)
    };
    Ok((l1, l2))
}

fn value_of(tape: &Tape, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| tape.value(v).get(0, 0))
}

fn sum_terms(tape: &mut Tape, terms: &[Option<Var>]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for t in terms.iter().flatten() {
        acc = Some(match acc {
            None => *t,
            Some(a) => tape.add(a, *t)?,
        });
    }
    Ok(acc)
}

/// One optimizer step on `L1 + L2` (phase 1) or `L1 + L2 + L3` (joint).
fn step(model: &mut Model, adam: &mut Adam, b: &Batch, joint: bool) -> Result<Losses> {
    let mut tape = Tape::new();
    let fwd = model.encode(&mut tape)?;
    let (l1, l2) = margin_terms(&mut tape, &fwd.enc, b, &model.encoders)?;
    let (l3, head) = if joint {
        let head = model.head(&mut tape, &fwd.enc)?;
        let f = gcn::score_features(&mut tape, &head.reps, &b.pairs)?;
        let l3 = gcn::classification_loss(&mut tape, &head.cls, f, &b.labels)?;
        (Some(l3), Some(head))
    } else {
        (None, None)
    };
    let losses = Losses {
        l1: value_of(&tape, l1),
        l2: value_of(&tape, l2),
        l3: value_of(&tape, l3),
    };
    let Some(total) = sum_terms(&mut tape, &[l1, l2, l3])? else {
        return Ok(losses);
    };
    tape.backward(total)?;

    let mut params: Vec<(String, &mut Tensor, Option<&Tensor>)> = Vec::new();
    for ((name, p), v) in model.encoders.named_mut().into_iter().zip(fwd.enc_vars.all()) {
        params.push((name, p, tape.grad(v)));
    }
    if let Some(head) = head {
        let vars = match head.gcn_vars {
            Some(g) => g.all(),
            None => vec![head.cls.w, head.cls.b],
        };
        let mut named = model.gcn.named_mut();
        if head.gcn_vars.is_none() {
            named.retain(|(n, _)| n.starts_with("cls."));
        }
        for ((name, p), v) in named.into_iter().zip(vars) {
            params.push((name, p, tape.grad(v)));
        }
    }
    adam.step(params)?;
    Ok(losses)
}

fn run_epoch(model: &mut Model, adam: &mut Adam, batcher: &mut Batcher, joint: bool) -> Result<Losses> {
    let mut total = Losses::default();
    for b in batcher.epoch() {
        total.add(step(model, adam, &b, joint)?);
    }
    Ok(total)
}

/// Input matrix for the vocabulary of `ds`, resolving missing words by the
/// configured policy.
fn input_matrix(ds: &SplitDataset, table: &EmbeddingTable, cfg: &TrainConfig) -> Result<Tensor> {
    let words = ds.vocab().words();
    if cfg.variant == Variant::Baseline1RandomVectors {
        let random = EmbeddingTable::random(cfg.input_dim, words, derive_seed(cfg.seed, TAG_RANDOM_VECTORS))?;
        return random.matrix(words);
    }
    if table.dim() != cfg.input_dim {
        return Err(Error::Config(format!(
            "embedding dimension {} does not match input_dim {}",
            table.dim(),
            cfg.input_dim
        )));
    }
    let mode = if cfg.strict_oov { OovMode::Strict } else { OovMode::OovRandom };
    if words.iter().all(|w| table.contains(w)) {
        return table.matrix(words);
    }
    let mut table = table.clone();
    table.prepopulate(words, mode)?;
    if table.oov_count() > 0 {
        log::warn!("{} vocabulary word(s) missing from the embeddings got random vectors", table.oov_count());
    }
    table.matrix(words)
}

/// Trains the preliminary encoders (`L1 + L2` only) and returns the model
/// holding them, with no graphs attached.
pub fn train_m_init(ds: &SplitDataset, table: &EmbeddingTable, cfg: &TrainConfig) -> Result<(Model, Vec<EpochLoss>)> {
    cfg.validate()?;
    let inputs = input_matrix(ds, table, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_INIT));
    let encoders = EncoderParams::glorot(cfg.encoder_dims(), &mut rng)
        .with_margins(cfg.synonym_margin, cfg.antonym_margin)?
        .with_activation(cfg.activation);
    let gcn = GcnParams::zeros(cfg.gcn_dims());
    let mut model = Model::new(
        Variant::Baseline2NoGcn,
        ds.vocab().words().to_vec(),
        inputs,
        encoders,
        gcn,
        None,
    )?;
    let mut adam = Adam::new(cfg.adam());
    let mut batcher = Batcher::new(ds, cfg, 1)?;
    let mut losses = Vec::with_capacity(cfg.init_epochs);
    for epoch in 0..cfg.init_epochs {
        let l = run_epoch(&mut model, &mut adam, &mut batcher, false)?;
        losses.push(l.record(1, epoch));
    }
    Ok((model, losses))
}

/// Runs the whole protocol for `cfg.variant`.
pub fn train_model(ds: &SplitDataset, table: &EmbeddingTable, cfg: &TrainConfig, exec: Execution) -> Result<TrainedModel> {
    let started = Instant::now();
    if ds.train.is_empty() || ds.dev.is_empty() || ds.test.is_empty() {
        return Err(Error::Contract("training needs nonempty train, dev and test splits".into()));
    }
    let (m_init, mut losses) = train_m_init(ds, table, cfg)?;
    let Model {
        vocab,
        inputs,
        mut encoders,
        ..
    } = m_init;
    let inputs = Rc::try_unwrap(inputs).unwrap_or_else(|rc| (*rc).clone());

    let mut graph_summary = None;
    let graphs = if cfg.variant.uses_graphs() {
        let proj = encoders.project_all(&inputs)?;
        let all: Vec<RelationPair> = ds.all_pairs().cloned().collect();
        let pairs = ds.pair_index(&all)?;
        let build = graph::construct(&proj, &inputs, &pairs, &cfg.graph_config(), exec)?;
        let count = |k: Provisional| build.scores.iter().filter(|s| s.kind == k).count();
        let mean = |label: Label| {
            let v: Vec<f64> = build
                .scores
                .iter()
                .filter(|s| all[s.pair].label == label)
                .map(|s| s.score)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        graph_summary = Some(GraphSummary {
            head: build.head_graph.stats(),
            tail: build.tail_graph.stats(),
            probable_antonyms: count(Provisional::ProbableAntonym),
            probable_synonyms: count(Provisional::ProbableSynonym),
            unassigned: count(Provisional::Unassigned),
            mean_score_antonym: mean(Label::Antonym),
            mean_score_synonym: mean(Label::Synonym),
            checksum_before: [0, 0],
            checksum_after: [0, 0],
        });
        Some((build.head_graph, build.tail_graph))
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_HEAD_INIT));
    let gcn = GcnParams::glorot(cfg.gcn_dims(), &mut rng);
    if cfg.cold_start {
        let mut cold = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_COLD));
        encoders = EncoderParams::glorot(cfg.encoder_dims(), &mut cold)
            .with_margins(cfg.synonym_margin, cfg.antonym_margin)?
            .with_activation(cfg.activation);
    }
    let mut model = Model::new(cfg.variant, vocab, inputs, encoders, gcn, graphs)?;
    if let (Some(s), Some(c)) = (graph_summary.as_mut(), model.adjacency_checksums()) {
        s.checksum_before = c;
    }

    let mut adam = Adam::new(cfg.adam());
    let mut batcher = Batcher::new(ds, cfg, 3)?;
    let mut best: Option<(f64, f64, usize, EncoderParams, GcnParams)> = None;
    let mut lowest_dev_loss = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let l = run_epoch(&mut model, &mut adam, &mut batcher, true)?;
        let (dev, dev_loss) = model.evaluate_with_loss(&ds.dev)?;
        losses.push(EpochLoss {
            dev_f1: Some(dev.f1),
            ..l.record(3, epoch)
        });
        let improved = match &best {
            None => true,
            Some((f1, loss, ..)) => dev.f1 > *f1 || (dev.f1 == *f1 && dev_loss < *loss),
        };
        let loss_improved = dev_loss < lowest_dev_loss;
        lowest_dev_loss = lowest_dev_loss.min(dev_loss);
        if improved {
            best = Some((dev.f1, dev_loss, epoch, model.encoders.clone(), model.gcn.clone()));
        }
        // Patience only runs out once neither dev F1 nor dev loss improves.
        if improved || loss_improved {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, _, epoch, enc, gcn)) => {
            model.encoders = enc;
            model.gcn = gcn;
            epoch
        }
        None => 0,
    };
    if let (Some(s), Some(c)) = (graph_summary.as_mut(), model.adjacency_checksums()) {
        s.checksum_after = c;
    }
    let dev = model.evaluate(&ds.dev)?;
    let test = model.evaluate(&ds.test)?;
    let record = RunRecord {
        config: cfg.clone(),
        losses,
        best_epoch,
        dev,
        test,
        graph: graph_summary,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    Ok(TrainedModel { record, model })
}

/// [`train_model`] with the default execution mode, keeping only the record.
pub fn train_full(ds: &SplitDataset, table: &EmbeddingTable, cfg: &TrainConfig) -> Result<RunRecord> {
    Ok(train_model(ds, table, cfg, Execution::default())?.record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub records: Vec<RunRecord>,
    pub dev: AggregateReport,
    pub test: AggregateReport,
}

/// `n_runs` independent runs with seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn run_suite(
    ds: &SplitDataset,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    n_runs: usize,
    exec: Execution,
) -> Result<SuiteReport> {
    if n_runs == 0 {
        return Err(Error::Contract("a suite needs at least one run".into()));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let records = par::map(exec, &seeds, |&seed| {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        train_model(ds, table, &cfg, exec).map(|t| t.record)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let dev: Vec<EvalReport> = records.iter().map(|r| r.dev.clone()).collect();
    let test: Vec<EvalReport> = records.iter().map(|r| r.test.clone()).collect();
    Ok(SuiteReport {
        dev: metrics::aggregate(&dev)?,
        test: metrics::aggregate(&test)?,
        records,
    })
}

/// One suite per attention scheme, all other settings shared.
pub fn ablate(
    ds: &SplitDataset,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    schemes: &[AttentionScheme],
    n_runs: usize,
    exec: Execution,
) -> Result<Vec<(AttentionScheme, SuiteReport)>> {
    schemes
        .iter()
        .map(|&scheme| {
            let cfg = TrainConfig {
                scheme,
                variant: Variant::Full,
                ..cfg.clone()
            };
            run_suite(ds, table, &cfg, n_runs, exec).map(|r| (scheme, r))
        })
        .collect()
}
