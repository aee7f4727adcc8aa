//! Versioned plain-text checkpoints.
//!
//! ```text
//! icenet-checkpoint 1
//! meta <key> <value>            any number of lines; value runs to end of line
//! vocab <n>
//! <word>                        n lines, one word per line
//! tensor <name> <rows> <cols>
//! <v> <v> ...                   rows lines of cols values
//! graph <name> <nodes> <edges>
//! <u> <v> <weight> [<s1> <s2>]* edges lines, with optional support pairs
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a save/load cycle
//! reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::AttentiveGraph;
use crate::tensor::Tensor;

const MAGIC: &str = "icenet-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub vocab: Vec<String>,
    pub tensors: BTreeMap<String, Tensor>,
    pub graphs: BTreeMap<String, AttentiveGraph>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Contract(format!("checkpoint has no meta key {key:?}")))
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = format!("{MAGIC} {FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Contract(format!("meta entry {k:?} cannot be stored on one line")));
            }
            let _ = writeln!(s, "meta {k} {v}");
        }
        let _ = writeln!(s, "vocab {}", self.vocab.len());
        for w in &self.vocab {
            if w.contains('\n') || w.is_empty() {
                return Err(Error::Contract(format!("vocabulary word {w:?} cannot be stored")));
            }
            let _ = writeln!(s, "{w}");
        }
        for (name, t) in &self.tensors {
            check_name(name)?;
            let _ = writeln!(s, "tensor {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                join_floats(&mut s, t.row(r));
            }
        }
        for (name, g) in &self.graphs {
            check_name(name)?;
            let _ = writeln!(s, "graph {name} {} {}", g.n_nodes(), g.n_edges());
            for (u, v, e) in g.edges() {
                let _ = write!(s, "{u} {v} {}", e.weight);
                for (a, b) in &e.support {
                    let _ = write!(s, " {a} {b}");
                }
                s.push('\n');
            }
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Checkpoint> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format(path, 0, format!("unexpected end of file, expected {what}")))
        };
        let (n, header) = next("header")?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(Error::format(path, n, format!("unsupported version {v}"))),
            _ => return Err(Error::format(path, n, "not an icenet checkpoint")),
        }
        let mut ck = Checkpoint::default();
        loop {
            let (n, line) = next("section")?;
            let mut fields = line.split(' ');
            match fields.next() {
                Some("meta") => {
                    let rest = &line[5..];
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                Some("vocab") => {
                    let count = parse_field::<usize>(fields.next(), path, n)?;
                    for _ in 0..count {
                        ck.vocab.push(next("vocabulary word")?.1.to_string());
                    }
                }
                Some("tensor") => {
                    let name = fields.next().ok_or_else(|| Error::format(path, n, "missing tensor name"))?;
                    let rows = parse_field::<usize>(fields.next(), path, n)?;
                    let cols = parse_field::<usize>(fields.next(), path, n)?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rn, row) = next("tensor row")?;
                        let before = data.len();
                        for tok in row.split(' ').filter(|t| !t.is_empty()) {
                            data.push(parse_field::<f64>(Some(tok), path, rn)?);
                        }
                        if data.len() - before != cols {
                            return Err(Error::format(path, rn, format!("expected {cols} values")));
                        }
                    }
                    ck.tensors.insert(name.to_string(), Tensor::from_vec(rows, cols, data)?);
                }
                Some("graph") => {
                    let name = fields.next().ok_or_else(|| Error::format(path, n, "missing graph name"))?;
                    let nodes = parse_field::<usize>(fields.next(), path, n)?;
                    let edges = parse_field::<usize>(fields.next(), path, n)?;
                    let mut g = AttentiveGraph::new(nodes);
                    for _ in 0..edges {
                        let (en, row) = next("edge")?;
                        let toks: Vec<&str> = row.split(' ').collect();
                        if toks.len() < 3 || toks.len().is_multiple_of(2) {
                            return Err(Error::format(path, en, "expected u v weight [support pairs]"));
                        }
                        let u = parse_field::<usize>(Some(toks[0]), path, en)?;
                        let v = parse_field::<usize>(Some(toks[1]), path, en)?;
                        let w = parse_field::<f64>(Some(toks[2]), path, en)?;
                        let mut support = Vec::new();
                        for pair in toks[3..].chunks(2) {
                            support.push((
                                parse_field::<f64>(Some(pair[0]), path, en)?,
                                parse_field::<f64>(Some(pair[1]), path, en)?,
                            ));
                        }
                        g.insert_edge(u, v, w, support)
                            .map_err(|e| Error::format(path, en, e.to_string()))?;
                    }
                    ck.graphs.insert(name.to_string(), g);
                }
                Some("end") => return Ok(ck),
                _ => return Err(Error::format(path, n, format!("unknown section {line:?}"))),
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text, path)
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(Error::Contract(format!("invalid checkpoint entry name {name:?}")));
    }
    Ok(())
}

fn join_floats(s: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s.push('\n');
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, path: &Path, line: usize) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::format(path, line, format!("malformed field {:?}", tok.unwrap_or(""))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("variant".into(), "full".into());
        ck.meta.insert("note".into(), "two words".into());
        ck.vocab = vec!["hot".into(), "ice cream".into(), "cold".into()];
        ck.tensors.insert(
            "w".into(),
            Tensor::from_vec(2, 3, vec![0.1, -1e-300, 3.0, f64::MIN_POSITIVE, 1.0 / 3.0, -0.0]).unwrap(),
        );
        ck.tensors.insert("empty".into(), Tensor::zeros(0, 4));
        let mut g = AttentiveGraph::new(3);
        g.add_edge(0, 2, 0.25, Some((0.3, 0.12))).unwrap();
        g.add_edge(1, 2, 1.0 / 7.0, None).unwrap();
        ck.graphs.insert("head".into(), g);
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_text(&ck.to_text().unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| c.tensors["w"].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn rejects_wrong_header_and_truncation() {
        assert!(Checkpoint::from_text("something else\n", Path::new("x")).is_err());
        assert!(Checkpoint::from_text("icenet-checkpoint 99\nend\n", Path::new("x")).is_err());
        let text = sample().to_text().unwrap();
        let cut = &text[..text.len() - 20];
        assert!(Checkpoint::from_text(cut, Path::new("x")).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
    }
}
