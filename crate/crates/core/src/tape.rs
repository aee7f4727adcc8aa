//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in evaluation order. [`Tape::backward`]
//! replays the record in reverse, computing adjoints for every node that
//! requires a gradient. Gradients accumulate across repeated `backward`
//! calls until [`Tape::zero_grad`] is called.
//!
//! ```
//! use icenet::tape::Tape;
//! use icenet::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let a = tape.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
//! let b = tape.constant(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
//! let y = tape.matmul(a, b).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.value(y).item().unwrap(), 11.0);
//! assert_eq!(tape.grad(a).unwrap().data(), &[3.0, 4.0]);
//! ```

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    /// Default: zero-centred outputs keep `tanh(⟨u, v⟩)` out of saturation
    /// at initialization, which sigmoid outputs do not.
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Affine { x: Var, scale: f64 },
    Unary(Var, Activation),
    Gather(Var, Rc<[usize]>),
    RowDot(Var, Var),
    RowCosine(Var, Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Rc<[usize]> },
    Spmm(Rc<CsrMatrix>, Var),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    zero_norm_cosines: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(Rc::new(value), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(Rc::new(value), false)
    }

    /// Registers a shared tensor without copying it.
    pub fn leaf(&mut self, value: Rc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of cosine rows that hit a zero-norm vector and were defined as 0.
    pub fn zero_norm_cosines(&self) -> usize {
        self.zero_norm_cosines
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds the `1 × n` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim("add_row", &xv.shape(), &bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale }, &[x])
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Unary(x, kind), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Relu)
    }

    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Rc<[usize]>>) -> Result<Var> {
        let idx = idx.into();
        let out = self.value(x).gather_rows(&idx)?;
        Ok(self.push(out, Op::Gather(x, idx), &[x]))
    }

    /// Row-wise inner products of two `m × p` tensors, as an `m × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape("row_dot", bv)?;
        let data = (0..av.rows())
            .map(|r| tensor::dot(av.row(r), bv.row(r)))
            .collect();
        let out = Tensor::from_vec(av.rows(), 1, data)?;
        Ok(self.push(out, Op::RowDot(a, b), &[a, b]))
    }

    /// Row-wise cosine similarity, as an `m × 1` column. Rows with a zero
    /// norm on either side yield 0 and bump [`Tape::zero_norm_cosines`].
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape("row_cosine", bv)?;
        let mut zero = 0;
        let data = (0..av.rows())
            .map(|r| {
                let (x, y) = (av.row(r), bv.row(r));
                let denom = tensor::norm(x) * tensor::norm(y);
                if denom == 0.0 {
                    zero += 1;
                    0.0
                } else {
                    tensor::dot(x, y) / denom
                }
            })
            .collect();
        let out = Tensor::from_vec(av.rows(), 1, data)?;
        if zero > 0 {
            log::warn!("{zero} cosine row(s) with zero norm defined as 0");
        }
        self.zero_norm_cosines += zero;
        Ok(self.push(out, Op::RowCosine(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        Ok(self.push(out, Op::Mean(x), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::dim("concat_cols", &[rows], &v.shape()));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: impl Into<Rc<[usize]>>) -> Result<Var> {
        let labels = labels.into();
        let lv = self.value(logits);
        if labels.is_empty() || lv.rows() != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", &lv.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lv.cols()) {
            return Err(Error::dim("softmax_cross_entropy", &lv.shape(), &[bad]));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            total -= log_softmax_at(lv.row(r), y);
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(out, Op::SoftmaxCrossEntropy { logits, labels }, &[logits]))
    }

    /// `adj · x` with a constant adjacency; gradients flow into `x` only.
    pub fn spmm(&mut self, adj: Rc<CsrMatrix>, x: Var) -> Result<Var> {
        let out = adj.mul_dense(self.value(x))?;
        Ok(self.push(out, Op::Spmm(adj, x), &[x]))
    }

    /// `tanh(⟨u, v⟩)` per row.
    pub fn inner_tanh(&mut self, u: Var, v: Var) -> Result<Var> {
        let d = self.row_dot(u, v)?;
        Ok(self.tanh(d))
    }

    /// Populates gradients of `loss` with respect to every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut adjoints)?;
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    accumulate(adj, *a, ga)?;
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    accumulate(adj, *b, gb)?;
                }
            }
            Op::AddRow(x, bias) => {
                if self.requires_grad(*x) {
                    accumulate(adj, *x, g.clone())?;
                }
                if self.requires_grad(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(adj, *bias, gb)?;
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        accumulate(adj, *v, g.clone())?;
                    }
                }
            }
            Op::Affine { x, scale } => {
                accumulate(adj, *x, g.map(|v| v * scale))?;
            }
            Op::Unary(x, kind) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                for ((o, &xi), &yi) in gx.data_mut().iter_mut().zip(xv.data()).zip(y.data()) {
                    *o *= kind.derivative(xi, yi);
                }
                accumulate(adj, *x, gx)?;
            }
            Op::Gather(x, idx) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(adj, *x, gx)?;
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    accumulate(adj, *a, scale_rows(bv, g))?;
                }
                if self.requires_grad(*b) {
                    accumulate(adj, *b, scale_rows(av, g))?;
                }
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let (x, z) = (av.row(r), bv.row(r));
                    let (nx, nz) = (tensor::norm(x), tensor::norm(z));
                    if nx == 0.0 || nz == 0.0 {
                        continue;
                    }
                    let c = y.get(r, 0);
                    let gr = g.get(r, 0);
                    for k in 0..x.len() {
                        ga.row_mut(r)[k] = gr * (z[k] / (nx * nz) - c * x[k] / (nx * nx));
                        gb.row_mut(r)[k] = gr * (x[k] / (nx * nz) - c * z[k] / (nz * nz));
                    }
                }
                if self.requires_grad(*a) {
                    accumulate(adj, *a, ga)?;
                }
                if self.requires_grad(*b) {
                    accumulate(adj, *b, gb)?;
                }
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(adj, *x, Tensor::filled(xv.rows(), xv.cols(), g.item()?))?;
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.item()? / xv.len() as f64;
                accumulate(adj, *x, Tensor::filled(xv.rows(), xv.cols(), v))?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let w = pv.cols();
                    if self.requires_grad(*p) {
                        let mut gp = Tensor::zeros(pv.rows(), w);
                        for r in 0..pv.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(adj, *p, gp)?;
                    }
                    offset += w;
                }
            }
            Op::Softmax(x) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (s, gr) = (y.row(r), g.row(r));
                    let inner = tensor::dot(s, gr);
                    for (k, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = s[k] * (gr[k] - inner);
                    }
                }
                accumulate(adj, *x, gx)?;
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let lv = self.value(*logits);
                let scale = g.item()? / labels.len() as f64;
                let mut gx = softmax_rows(lv);
                for (r, &lab) in labels.iter().enumerate() {
                    let row = gx.row_mut(r);
                    row[lab] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(adj, *logits, gx)?;
            }
            Op::Spmm(a, x) => {
                accumulate(adj, *x, a.t_mul_dense(g)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Multiplies row `r` of `x` by the scalar `g[r, 0]`.
fn scale_rows(x: &Tensor, g: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let s = g.get(r, 0);
        for v in out.row_mut(r) {
            *v *= s;
        }
    }
    out
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[k] - lse
}

/// Plain (untaped) `tanh(⟨u, v⟩)`.
pub fn inner_tanh_score(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("inner_tanh_score", &[u.len()], &[v.len()]));
    }
    Ok(tensor::dot(u, v).tanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations_at_known_points() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(&[0.0, -2.5]));
        let t = tape.tanh(x);
        assert_eq!(tape.value(t).get(0, 0), 0.0);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).get(0, 1), 0.0);
    }

    #[test]
    fn inner_tanh_known_values() {
        assert_eq!(inner_tanh_score(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        let s = inner_tanh_score(&[1.0, 0.0], &[0.5, 0.0]).unwrap();
        assert!((s - 0.462_117_157_260_009_8).abs() < 1e-12);
        assert!(inner_tanh_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(2, 2));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::row_vector(&[1.0, -2.0]));
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[2.0, 2.0]);
        tape.zero_grad();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::row_vector(&[1.0]));
        let c = tape.constant(Tensor::row_vector(&[3.0]));
        let y = tape.row_dot(a, c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(a).unwrap().data(), &[3.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let mut tape = Tape::new();
        let l = tape.param(Tensor::zeros(3, 2));
        let ce = tape.softmax_cross_entropy(l, vec![0, 1, 1]).unwrap();
        assert!((tape.value(ce).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
