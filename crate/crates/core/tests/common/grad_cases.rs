use std::rc::Rc;

use icenet::dataset::Label;
use icenet::encoders::{self, Encoded, EncoderVars, FeedForwardVars};
use icenet::gcn::{self, ClassifierVars, GcnVars};
use icenet::sparse::CsrMatrix;
use icenet::tape::{Activation, Tape, Var};
use icenet::tensor::Tensor;
use rand::Rng;

use super::{pair_index, random_tensor, rng};

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub struct GradCase {
    pub name: &'static str,
    pub params: Vec<Tensor>,
    pub build: Build,
}

/// Reduces any tensor to a scalar through a fixed random contraction, so
/// every output entry gets a distinct upstream gradient.
fn contract(tape: &mut Tape, y: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let d = tape.row_dot(y, w).unwrap();
    tape.sum(d)
}

fn case(name: &'static str, params: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> GradCase {
    GradCase {
        name,
        params,
        build: Box::new(build),
    }
}

fn random_adjacency(r: &mut impl Rng, n: usize) -> Rc<CsrMatrix> {
    let mut t = Vec::new();
    for a in 0..n {
        t.push((a, a, r.random_range(0.2..1.0)));
        for b in 0..n {
            if a != b && r.random_bool(0.4) {
                t.push((a, b, r.random_range(0.0..1.0)));
            }
        }
    }
    Rc::new(CsrMatrix::from_triplets(n, n, &t).unwrap())
}

/// One instance of every differentiable primitive plus the full
/// three-loss composite, with inputs drawn from `seed`.
pub fn all_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();

    let (a, b) = (random_tensor(&mut r, 3, 4, 1.0), random_tensor(&mut r, 4, 2, 1.0));
    let c = random_tensor(&mut r, 3, 2, 1.0);
    cases.push(case("matmul", vec![a, b], move |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        contract(t, y, &c)
    }));

    let (x, bias) = (random_tensor(&mut r, 4, 3, 1.0), random_tensor(&mut r, 1, 3, 1.0));
    let c = random_tensor(&mut r, 4, 3, 1.0);
    cases.push(case("add_row", vec![x, bias], move |t, v| {
        let y = t.add_row(v[0], v[1]).unwrap();
        contract(t, y, &c)
    }));

    let (p, q) = (random_tensor(&mut r, 2, 3, 1.0), random_tensor(&mut r, 2, 3, 1.0));
    let c = random_tensor(&mut r, 2, 3, 1.0);
    cases.push(case("add", vec![p, q], move |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        contract(t, y, &c)
    }));

    let x = random_tensor(&mut r, 3, 3, 1.0);
    let c = random_tensor(&mut r, 3, 3, 1.0);
    cases.push(case("affine", vec![x], move |t, v| {
        let y = t.affine(v[0], -1.3, 0.4);
        contract(t, y, &c)
    }));

    for (name, act) in [
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
        ("relu", Activation::Relu),
    ] {
        let x = random_tensor(&mut r, 3, 4, 2.0);
        let c = random_tensor(&mut r, 3, 4, 1.0);
        cases.push(case(name, vec![x], move |t, v| {
            let y = t.activate(v[0], act);
            contract(t, y, &c)
        }));
    }

    let x = random_tensor(&mut r, 4, 3, 1.0);
    let c = random_tensor(&mut r, 5, 3, 1.0);
    cases.push(case("gather_rows", vec![x], move |t, v| {
        let y = t.gather_rows(v[0], vec![2, 0, 2, 3, 2]).unwrap();
        contract(t, y, &c)
    }));

    let (p, q) = (random_tensor(&mut r, 4, 3, 1.0), random_tensor(&mut r, 4, 3, 1.0));
    let c = random_tensor(&mut r, 4, 1, 1.0);
    cases.push(case("row_dot", vec![p.clone(), q.clone()], move |t, v| {
        let y = t.row_dot(v[0], v[1]).unwrap();
        contract(t, y, &c)
    }));
    let c = random_tensor(&mut r, 4, 1, 1.0);
    cases.push(case("row_cosine", vec![p.clone(), q.clone()], move |t, v| {
        let y = t.row_cosine(v[0], v[1]).unwrap();
        contract(t, y, &c)
    }));
    let c = random_tensor(&mut r, 4, 1, 1.0);
    cases.push(case("inner_tanh", vec![p, q], move |t, v| {
        let y = t.inner_tanh(v[0], v[1]).unwrap();
        contract(t, y, &c)
    }));

    let x = random_tensor(&mut r, 3, 2, 1.0);
    cases.push(case("sum", vec![x.clone()], |t, v| {
        let s = t.sum(v[0]);
        t.tanh(s)
    }));
    cases.push(case("mean", vec![x], |t, v| {
        let s = t.mean(v[0]).unwrap();
        t.sigmoid(s)
    }));

    let (p, q) = (random_tensor(&mut r, 3, 1, 1.0), random_tensor(&mut r, 3, 2, 1.0));
    let c = random_tensor(&mut r, 3, 3, 1.0);
    cases.push(case("concat_cols", vec![p, q], move |t, v| {
        let y = t.concat_cols(&[v[0], v[1]]).unwrap();
        contract(t, y, &c)
    }));

    let x = random_tensor(&mut r, 3, 2, 2.0);
    let c = random_tensor(&mut r, 3, 2, 1.0);
    cases.push(case("softmax", vec![x.clone()], move |t, v| {
        let y = t.softmax(v[0]);
        contract(t, y, &c)
    }));
    cases.push(case("softmax_cross_entropy", vec![x], |t, v| {
        t.softmax_cross_entropy(v[0], vec![1, 0, 1]).unwrap()
    }));

    let adj = random_adjacency(&mut r, 4);
    let x = random_tensor(&mut r, 4, 3, 1.0);
    let c = random_tensor(&mut r, 4, 3, 1.0);
    cases.push(case("spmm", vec![x], move |t, v| {
        let y = t.spmm(Rc::clone(&adj), v[0]).unwrap();
        contract(t, y, &c)
    }));

    cases.push(composite(&mut r));
    cases
}

/// `L1 + L2 + L3` through both encoders, four graph branches and the
/// classifier, on a 6-word toy vocabulary.
fn composite(r: &mut impl Rng) -> GradCase {
    let (n, d, hid, p, gh, q) = (6, 5, 4, 3, 3, 2);
    let inputs = random_tensor(r, n, d, 1.0);
    let mut params = Vec::new();
    for _ in 0..2 {
        params.push(random_tensor(r, d, hid, 0.8));
        params.push(random_tensor(r, 1, hid, 0.3));
        params.push(random_tensor(r, hid, p, 0.8));
        params.push(random_tensor(r, 1, p, 0.3));
    }
    for _ in 0..4 {
        params.push(random_tensor(r, p, gh, 0.8));
        params.push(random_tensor(r, gh, q, 0.8));
    }
    params.push(random_tensor(r, 4, 2, 0.8));
    params.push(random_tensor(r, 1, 2, 0.3));
    let a_h = random_adjacency(r, n);
    let a_t = random_adjacency(r, n);
    let syn_pos = pair_index(&[(0, 1), (2, 3)]);
    let syn_neg = pair_index(&[(0, 4), (5, 1)]);
    let ant_pos = pair_index(&[(0, 2), (1, 5), (4, 3)]);
    let ant_neg = pair_index(&[(3, 2)]);
    let labeled = pair_index(&[(0, 1), (0, 2), (1, 5), (4, 3)]);
    let labels = [Label::Synonym, Label::Antonym, Label::Antonym, Label::Antonym];

    case("l1_l2_l3_composite", params, move |t, v| {
        let ff = |i: usize| FeedForwardVars {
            w_in: v[i],
            b_in: v[i + 1],
            w_out: v[i + 2],
            b_out: v[i + 3],
        };
        let enc_vars = EncoderVars {
            synonym: ff(0),
            antonym: ff(4),
            activation: Activation::Tanh,
        };
        let x = t.constant(inputs.clone());
        let enc: Encoded = enc_vars.encode(t, x).unwrap();
        let l1 = encoders::synonym_loss(t, &enc, &syn_pos, &syn_neg, 0.9).unwrap();
        let l2 = encoders::antonym_loss(t, &enc, &ant_pos, &ant_neg, 0.9).unwrap();
        let gcn_vars = GcnVars {
            head_syn: [v[8], v[9]],
            tail_syn: [v[10], v[11]],
            head_ant: [v[12], v[13]],
            tail_ant: [v[14], v[15]],
            classifier: ClassifierVars { w: v[16], b: v[17] },
        };
        let reps = gcn::gcn_forward(t, &gcn_vars, &enc, &a_h, &a_t).unwrap();
        let feats = gcn::score_features(t, &reps, &labeled).unwrap();
        let l3 = gcn::classification_loss(t, &gcn_vars.classifier, feats, &labels).unwrap();
        let s = t.add(l1, l2).unwrap();
        t.add(s, l3).unwrap()
    })
}
