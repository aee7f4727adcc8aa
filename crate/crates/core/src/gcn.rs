//! Attentive graph convolution head and pair classifier.
//!
//! Four two-layer convolutions run over the fixed normalized adjacencies:
//!
//! | output | graph | input |
//! |--------|-------|-------|
//! | `hh`   | head  | synonym projection |
//! | `ht`   | tail  | synonym projection |
//! | `th`   | head  | antonym projection |
//! | `tt`   | tail  | antonym projection |
//!
//! each computing `Â · relu(Â · F · W₁) · W₂`. A pair `(h, t)` is described by
//! four cosines, head-role vectors read from row `h` and tail-role vectors
//! from row `t`:
//!
//! ```text
//! x1 = cos(th[h], tt[t])    x2 = cos(hh[h], ht[t])
//! x3 = cos(hh[h], tt[t])    x4 = cos(ht[t], th[h])
//! ```
//!
//! and classified by `softmax(x · w + b)`.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, PairIndex};
use crate::encoders::Encoded;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::tape::{softmax_rows, Tape, Var};
use crate::tensor::Tensor;

pub const N_FEATURES: usize = 4;
pub const N_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for GcnDims {
    fn default() -> Self {
        GcnDims {
            input: 80,
            hidden: 70,
            output: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnBranch {
    pub w1: Tensor,
    pub w2: Tensor,
}

impl GcnBranch {
    fn glorot<R: Rng + ?Sized>(dims: GcnDims, rng: &mut R) -> Self {
        GcnBranch {
            w1: Tensor::glorot(dims.input, dims.hidden, rng),
            w2: Tensor::glorot(dims.hidden, dims.output, rng),
        }
    }

    fn zeros(dims: GcnDims) -> Self {
        GcnBranch {
            w1: Tensor::zeros(dims.input, dims.hidden),
            w2: Tensor::zeros(dims.hidden, dims.output),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// `4 × 2`, features by classes.
    pub w: Tensor,
    /// `1 × 2`.
    pub b: Tensor,
}

impl Classifier {
    pub fn glorot<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Classifier {
            w: Tensor::glorot(N_FEATURES, N_CLASSES, rng),
            b: Tensor::zeros(1, N_CLASSES),
        }
    }

    pub fn zeros() -> Self {
        Classifier {
            w: Tensor::zeros(N_FEATURES, N_CLASSES),
            b: Tensor::zeros(1, N_CLASSES),
        }
    }

    /// Class probabilities and prediction for one feature row. Ties go to
    /// synonym.
    pub fn classify(&self, features: &[f64; N_FEATURES]) -> ([f64; N_CLASSES], Label) {
        let x = Tensor::row_vector(features);
        let mut logits = x.matmul(&self.w).expect("4 × 2 classifier");
        logits.add_assign(&self.b).expect("1 × 2 bias");
        let p = softmax_rows(&logits);
        let probs = [p.get(0, 0), p.get(0, 1)];
        (probs, predict(&probs))
    }
}

/// Argmax over class probabilities; ties go to synonym.
pub fn predict(probs: &[f64]) -> Label {
    if probs[1] > probs[0] {
        Label::Antonym
    } else {
        Label::Synonym
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub head_syn: GcnBranch,
    pub tail_syn: GcnBranch,
    pub head_ant: GcnBranch,
    pub tail_ant: GcnBranch,
    pub classifier: Classifier,
}

impl GcnParams {
    pub fn glorot<R: Rng + ?Sized>(dims: GcnDims, rng: &mut R) -> Self {
        GcnParams {
            head_syn: GcnBranch::glorot(dims, rng),
            tail_syn: GcnBranch::glorot(dims, rng),
            head_ant: GcnBranch::glorot(dims, rng),
            tail_ant: GcnBranch::glorot(dims, rng),
            classifier: Classifier::glorot(rng),
        }
    }

    pub fn zeros(dims: GcnDims) -> Self {
        GcnParams {
            head_syn: GcnBranch::zeros(dims),
            tail_syn: GcnBranch::zeros(dims),
            head_ant: GcnBranch::zeros(dims),
            tail_ant: GcnBranch::zeros(dims),
            classifier: Classifier::zeros(),
        }
    }

    fn branches(&self) -> [(&'static str, &GcnBranch); 4] {
        [
            ("gcn_hh", &self.head_syn),
            ("gcn_ht", &self.tail_syn),
            ("gcn_th", &self.head_ant),
            ("gcn_tt", &self.tail_ant),
        ]
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (name, b) in self.branches() {
            v.push((format!("{name}.w1"), &b.w1));
            v.push((format!("{name}.w2"), &b.w2));
        }
        v.push(("cls.w".into(), &self.classifier.w));
        v.push(("cls.b".into(), &self.classifier.b));
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (name, b) in [
            ("gcn_hh", &mut self.head_syn),
            ("gcn_ht", &mut self.tail_syn),
            ("gcn_th", &mut self.head_ant),
            ("gcn_tt", &mut self.tail_ant),
        ] {
            v.push((format!("{name}.w1"), &mut b.w1));
            v.push((format!("{name}.w2"), &mut b.w2));
        }
        v.push(("cls.w".into(), &mut self.classifier.w));
        v.push(("cls.b".into(), &mut self.classifier.b));
        v
    }

    pub fn register(&self, tape: &mut Tape) -> GcnVars {
        let mut branch = |b: &GcnBranch| [tape.param(b.w1.clone()), tape.param(b.w2.clone())];
        let head_syn = branch(&self.head_syn);
        let tail_syn = branch(&self.tail_syn);
        let head_ant = branch(&self.head_ant);
        let tail_ant = branch(&self.tail_ant);
        GcnVars {
            head_syn,
            tail_syn,
            head_ant,
            tail_ant,
            classifier: ClassifierVars::register(&self.classifier, tape),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierVars {
    pub w: Var,
    pub b: Var,
}

impl ClassifierVars {
    pub fn register(c: &Classifier, tape: &mut Tape) -> Self {
        ClassifierVars {
            w: tape.param(c.w.clone()),
            b: tape.param(c.b.clone()),
        }
    }

    /// `features · w + b`.
    pub fn logits(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let z = tape.matmul(features, self.w)?;
        tape.add_row(z, self.b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GcnVars {
    pub head_syn: [Var; 2],
    pub tail_syn: [Var; 2],
    pub head_ant: [Var; 2],
    pub tail_ant: [Var; 2],
    pub classifier: ClassifierVars,
}

impl GcnVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for b in [self.head_syn, self.tail_syn, self.head_ant, self.tail_ant] {
            v.extend(b);
        }
        v.extend([self.classifier.w, self.classifier.b]);
        v
    }
}

/// Per-node representations feeding the pair features.
#[derive(Clone, Copy, Debug)]
pub struct NodeReps {
    pub hh: Var,
    pub ht: Var,
    pub th: Var,
    pub tt: Var,
}

impl NodeReps {
    /// Encoder outputs used directly, with no graph propagation.
    pub fn without_graph(enc: &Encoded) -> Self {
        NodeReps {
            hh: enc.synonym,
            ht: enc.synonym,
            th: enc.antonym,
            tt: enc.antonym,
        }
    }
}

/// `Â · relu(Â · F · W₁) · W₂`.
pub fn convolve(tape: &mut Tape, adj: &Rc<CsrMatrix>, features: Var, w: [Var; 2]) -> Result<Var> {
    let n = tape.value(features).rows();
    if adj.rows() != n {
        return Err(Error::dim("gcn", &[adj.rows(), adj.cols()], &tape.value(features).shape()));
    }
    let z = tape.matmul(features, w[0])?;
    let z = tape.spmm(Rc::clone(adj), z)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, w[1])?;
    tape.spmm(Rc::clone(adj), z)
}

pub fn gcn_forward(
    tape: &mut Tape,
    vars: &GcnVars,
    enc: &Encoded,
    head_adj: &Rc<CsrMatrix>,
    tail_adj: &Rc<CsrMatrix>,
) -> Result<NodeReps> {
    Ok(NodeReps {
        hh: convolve(tape, head_adj, enc.synonym, vars.head_syn)?,
        ht: convolve(tape, tail_adj, enc.synonym, vars.tail_syn)?,
        th: convolve(tape, head_adj, enc.antonym, vars.head_ant)?,
        tt: convolve(tape, tail_adj, enc.antonym, vars.tail_ant)?,
    })
}

/// The `pairs × 4` cosine feature matrix.
pub fn score_features(tape: &mut Tape, reps: &NodeReps, pairs: &PairIndex) -> Result<Var> {
    let heads: Rc<[usize]> = Rc::from(pairs.heads.as_slice());
    let tails: Rc<[usize]> = Rc::from(pairs.tails.as_slice());
    let hh_h = tape.gather_rows(reps.hh, Rc::clone(&heads))?;
    let th_h = tape.gather_rows(reps.th, Rc::clone(&heads))?;
    let ht_t = tape.gather_rows(reps.ht, Rc::clone(&tails))?;
    let tt_t = tape.gather_rows(reps.tt, Rc::clone(&tails))?;
    // x1, x2 lean synonym; x3, x4 lean antonym.
    let x1 = tape.row_cosine(th_h, tt_t)?;
    let x2 = tape.row_cosine(hh_h, ht_t)?;
    let x3 = tape.row_cosine(hh_h, tt_t)?;
    let x4 = tape.row_cosine(ht_t, th_h)?;
    tape.concat_cols(&[x1, x2, x3, x4])
}

/// Mean cross-entropy of `labels` under the classifier.
pub fn classification_loss(tape: &mut Tape, cls: &ClassifierVars, features: Var, labels: &[Label]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Contract("classification loss needs a nonempty batch".into()));
    }
    let logits = cls.logits(tape, features)?;
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    tape.softmax_cross_entropy(logits, idx)
}

/// Predictions for every row of an evaluated logit matrix.
pub fn predictions(logits: &Tensor) -> Vec<Label> {
    let p = softmax_rows(logits);
    (0..p.rows()).map(|r| predict(p.row(r))).collect()
}
