//! The two relation encoders and their margin losses.
//!
//! Both encoders are two-layer feed-forward maps `act(act(x·W_in + b_in)·W_out + b_out)`
//! from the embedding dimension to the projection dimension. Weights are
//! stored input-by-output, so the products act on row vectors.
//!
//! The synonym encoder is trained with
//! `Σ_pos max(0, γ₁ − s) + Σ_neg max(0, γ₁ + s)`, `s = tanh(⟨f_syn(h), f_syn(t)⟩)`.
//! The antonym loss has the same hinge structure but scores a pair as
//! `tanh(⟨f_ant(h), f_syn(t)⟩)`: the tail always goes through the synonym
//! encoder, which couples the two objectives.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairIndex;
use crate::error::{Error, Result};
use crate::tape::{inner_tanh_score, Activation, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            input: 300,
            hidden: 150,
            output: 80,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl FeedForward {
    pub fn glorot<R: Rng + ?Sized>(dims: EncoderDims, rng: &mut R) -> Self {
        FeedForward {
            w_in: Tensor::glorot(dims.input, dims.hidden, rng),
            b_in: Tensor::zeros(1, dims.hidden),
            w_out: Tensor::glorot(dims.hidden, dims.output, rng),
            b_out: Tensor::zeros(1, dims.output),
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        FeedForward {
            w_in: Tensor::zeros(dims.input, dims.hidden),
            b_in: Tensor::zeros(1, dims.hidden),
            w_out: Tensor::zeros(dims.hidden, dims.output),
            b_out: Tensor::zeros(1, dims.output),
        }
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            input: self.w_in.rows(),
            hidden: self.w_in.cols(),
            output: self.w_out.cols(),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> FeedForwardVars {
        FeedForwardVars {
            w_in: tape.param(self.w_in.clone()),
            b_in: tape.param(self.b_in.clone()),
            w_out: tape.param(self.w_out.clone()),
            b_out: tape.param(self.b_out.clone()),
        }
    }

    /// Encodes every row of `x` without recording gradients.
    pub fn forward(&self, x: &Tensor, act: Activation) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = FeedForwardVars {
            w_in: tape.constant(self.w_in.clone()),
            b_in: tape.constant(self.b_in.clone()),
            w_out: tape.constant(self.w_out.clone()),
            b_out: tape.constant(self.b_out.clone()),
        };
        let xv = tape.constant(x.clone());
        let out = vars.encode(&mut tape, xv, act)?;
        Ok(tape.value(out).clone())
    }

    fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor)> {
        vec![
            (format!("{prefix}.w_in"), &self.w_in),
            (format!("{prefix}.b_in"), &self.b_in),
            (format!("{prefix}.w_out"), &self.w_out),
            (format!("{prefix}.b_out"), &self.b_out),
        ]
    }

    fn named_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor)> {
        vec![
            (format!("{prefix}.w_in"), &mut self.w_in),
            (format!("{prefix}.b_in"), &mut self.b_in),
            (format!("{prefix}.w_out"), &mut self.w_out),
            (format!("{prefix}.b_out"), &mut self.b_out),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardVars {
    pub w_in: Var,
    pub b_in: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl FeedForwardVars {
    pub fn encode(&self, tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
        let h = tape.matmul(x, self.w_in)?;
        let h = tape.add_row(h, self.b_in)?;
        let h = tape.activate(h, act);
        let o = tape.matmul(h, self.w_out)?;
        let o = tape.add_row(o, self.b_out)?;
        Ok(tape.activate(o, act))
    }

    pub fn all(&self) -> [Var; 4] {
        [self.w_in, self.b_in, self.w_out, self.b_out]
    }
}

/// Parameters of both relation encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// Captures synonymy; also encodes the tail side of antonym scores.
    pub synonym: FeedForward,
    /// Encodes the head side of antonym scores.
    pub antonym: FeedForward,
    pub synonym_margin: f64,
    pub antonym_margin: f64,
    pub activation: Activation,
}

impl EncoderParams {
    pub fn glorot<R: Rng + ?Sized>(dims: EncoderDims, rng: &mut R) -> Self {
        let synonym = FeedForward::glorot(dims, rng);
        let antonym = FeedForward::glorot(dims, rng);
        EncoderParams {
            synonym,
            antonym,
            synonym_margin: 0.9,
            antonym_margin: 0.9,
            activation: Activation::default(),
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        EncoderParams {
            synonym: FeedForward::zeros(dims),
            antonym: FeedForward::zeros(dims),
            synonym_margin: 0.9,
            antonym_margin: 0.9,
            activation: Activation::default(),
        }
    }

    pub fn with_margins(mut self, synonym: f64, antonym: f64) -> Result<Self> {
        self.synonym_margin = synonym;
        self.antonym_margin = antonym;
        self.validate()?;
        Ok(self)
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("synonym", self.synonym_margin), ("antonym", self.antonym_margin)] {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::Config(format!("{name} margin {m} outside (0, 1]")));
            }
        }
        if self.synonym.dims() != self.antonym.dims() {
            return Err(Error::Config("encoder shapes differ".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> EncoderDims {
        self.synonym.dims()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.synonym.named("enc_syn");
        v.extend(self.antonym.named("enc_ant"));
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.synonym.named_mut("enc_syn");
        v.extend(self.antonym.named_mut("enc_ant"));
        v
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            synonym: self.synonym.register(tape),
            antonym: self.antonym.register(tape),
            activation: self.activation,
        }
    }

    /// Synonym projection of one embedding vector.
    pub fn f_syn(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.synonym, x)
    }

    /// Antonym projection of one embedding vector.
    pub fn f_ant(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.antonym, x)
    }

    fn project(&self, enc: &FeedForward, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != enc.w_in.rows() {
            return Err(Error::dim("encode", &[enc.w_in.rows()], &[x.len()]));
        }
        Ok(enc.forward(&Tensor::row_vector(x), self.activation)?.into_data())
    }

    /// `tanh(⟨f_syn(h), f_syn(t)⟩)`.
    pub fn synonym_score(&self, head: &[f64], tail: &[f64]) -> Result<f64> {
        inner_tanh_score(&self.f_syn(head)?, &self.f_syn(tail)?)
    }

    /// `tanh(⟨f_ant(h), f_syn(t)⟩)`.
    pub fn antonym_score(&self, head: &[f64], tail: &[f64]) -> Result<f64> {
        inner_tanh_score(&self.f_ant(head)?, &self.f_syn(tail)?)
    }

    /// Both projections of every row of `inputs`.
    pub fn project_all(&self, inputs: &Tensor) -> Result<Projections> {
        Ok(Projections {
            synonym: self.synonym.forward(inputs, self.activation)?,
            antonym: self.antonym.forward(inputs, self.activation)?,
        })
    }
}

/// Encoder outputs for a batch of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    pub synonym: Tensor,
    pub antonym: Tensor,
}

impl Projections {
    /// Antonym-oriented score of `(head, tail)` rows.
    pub fn antonym_score(&self, head: usize, tail: usize) -> f64 {
        crate::tensor::dot(self.antonym.row(head), self.synonym.row(tail)).tanh()
    }

    pub fn synonym_score(&self, head: usize, tail: usize) -> f64 {
        crate::tensor::dot(self.synonym.row(head), self.synonym.row(tail)).tanh()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub synonym: FeedForwardVars,
    pub antonym: FeedForwardVars,
    pub activation: Activation,
}

/// Taped encoder outputs for a matrix of inputs.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub synonym: Var,
    pub antonym: Var,
}

impl EncoderVars {
    pub fn encode(&self, tape: &mut Tape, inputs: Var) -> Result<Encoded> {
        Ok(Encoded {
            synonym: self.synonym.encode(tape, inputs, self.activation)?,
            antonym: self.antonym.encode(tape, inputs, self.activation)?,
        })
    }

    pub fn all(&self) -> Vec<Var> {
        let mut v = self.synonym.all().to_vec();
        v.extend(self.antonym.all());
        v
    }
}

/// Hinge loss `Σ max(0, γ − s⁺) + Σ max(0, γ + s⁻)` with
/// `s = tanh(⟨head_repr[h], tail_repr[t]⟩)`.
pub fn margin_loss(
    tape: &mut Tape,
    head_repr: Var,
    tail_repr: Var,
    positives: &PairIndex,
    negatives: &PairIndex,
    margin: f64,
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::Contract("margin loss needs at least one positive pair".into()));
    }
    let pos = pair_scores(tape, head_repr, tail_repr, positives)?;
    let pos = tape.affine(pos, -1.0, margin);
    let pos = tape.relu(pos);
    let mut loss = tape.sum(pos);
    if !negatives.is_empty() {
        let neg = pair_scores(tape, head_repr, tail_repr, negatives)?;
        let neg = tape.affine(neg, 1.0, margin);
        let neg = tape.relu(neg);
        let neg = tape.sum(neg);
        loss = tape.add(loss, neg)?;
    }
    Ok(loss)
}

/// `tanh(⟨head_repr[h], tail_repr[t]⟩)` for every pair, as a column.
pub fn pair_scores(tape: &mut Tape, head_repr: Var, tail_repr: Var, pairs: &PairIndex) -> Result<Var> {
    let h = tape.gather_rows(head_repr, Rc::from(pairs.heads.as_slice()))?;
    let t = tape.gather_rows(tail_repr, Rc::from(pairs.tails.as_slice()))?;
    tape.inner_tanh(h, t)
}

/// Synonym-encoder margin loss.
pub fn synonym_loss(
    tape: &mut Tape,
    enc: &Encoded,
    positives: &PairIndex,
    negatives: &PairIndex,
    margin: f64,
) -> Result<Var> {
    margin_loss(tape, enc.synonym, enc.synonym, positives, negatives, margin)
}

/// Antonym-encoder margin loss: heads through the antonym encoder, tails
/// through the synonym encoder.
pub fn antonym_loss(
    tape: &mut Tape,
    enc: &Encoded,
    positives: &PairIndex,
    negatives: &PairIndex,
    margin: f64,
) -> Result<Var> {
    margin_loss(tape, enc.antonym, enc.synonym, positives, negatives, margin)
}
