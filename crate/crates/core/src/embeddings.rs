//! Pretrained word vectors in the word2vec text format.
//!
//! The file holds an optional `count dim` header followed by one line per
//! word: the token and `dim` whitespace-separated reals. Files whose name ends
//! in `.gz` are decompressed on the fly.
//!
//! Out-of-vocabulary words can be given a random vector drawn uniformly from
//! `[-0.5/d, 0.5/d]`. The draw is keyed by `(oov_seed, word)` so it does not
//! depend on lookup order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OovMode {
    Strict,
    #[default]
    OovRandom,
}

impl std::str::FromStr for OovMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(OovMode::Strict),
            "oov-random" | "random" => Ok(OovMode::OovRandom),
            other => Err(Error::Config(format!("unknown OOV mode {other:?}"))),
        }
    }
}

/// Counters collected while reading an embedding file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub malformed_lines: usize,
    pub duplicate_words: usize,
    pub header: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    oov_seed: u64,
    oov_words: usize,
    report: LoadReport,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            oov_seed,
            oov_words: 0,
            report: LoadReport::default(),
        })
    }

    /// A table in which every word of `vocab` gets a vector from the OOV
    /// stream, ignoring any pretrained values.
    pub fn random<S: AsRef<str>>(dim: usize, vocab: &[S], oov_seed: u64) -> Result<Self> {
        let mut table = EmbeddingTable::new(dim, oov_seed)?;
        for w in vocab {
            table.resolve(w.as_ref(), OovMode::OovRandom)?;
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    /// How many rows were generated for out-of-vocabulary words.
    pub fn oov_count(&self) -> usize {
        self.oov_words
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Inserts or overwrites a vector.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim("insert", &[self.dim], &[vector.len()]));
        }
        match self.index.get(word) {
            Some(&i) => self.vectors[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push(word.to_string());
                self.vectors.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    /// Returns the vector for `word`. Under [`OovMode::OovRandom`] an unknown
    /// word gets a seeded random vector that is cached in the table.
    pub fn resolve(&mut self, word: &str, mode: OovMode) -> Result<&[f64]> {
        if !self.index.contains_key(word) {
            if mode == OovMode::Strict {
                return Err(Error::MissingWord(word.to_string()));
            }
            let v = self.oov_vector(word);
            self.insert(word, &v)?;
            self.oov_words += 1;
        }
        Ok(self.lookup(word).expect("word was just inserted"))
    }

    /// Resolves every word up front so later lookups never mutate the table.
    pub fn prepopulate<S: AsRef<str>>(&mut self, words: &[S], mode: OovMode) -> Result<()> {
        for w in words {
            self.resolve(w.as_ref(), mode)?;
        }
        Ok(())
    }

    /// Stacks the vectors of `words` into a `len × dim` matrix.
    pub fn matrix<S: AsRef<str>>(&self, words: &[S]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(words.len() * self.dim);
        for w in words {
            let w = w.as_ref();
            data.extend_from_slice(self.lookup(w).ok_or_else(|| Error::MissingWord(w.to_string()))?);
        }
        Tensor::from_vec(words.len(), self.dim, data)
    }

    fn oov_vector(&self, word: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.oov_seed.to_le_bytes());
        hasher.update(word.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let bound = 0.5 / self.dim as f64;
        (0..self.dim).map(|_| rng.random_range(-bound..=bound)).collect()
    }
}

/// Reads an embedding file, rejecting it when its dimension is not `expected_dim`.
pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: usize, oov_seed: u64) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    read_embeddings(BufReader::new(reader), path, expected_dim, oov_seed)
}

pub fn read_embeddings<R: BufRead>(
    reader: R,
    path: &Path,
    expected_dim: usize,
    oov_seed: u64,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(expected_dim, oov_seed)?;
    let mut report = LoadReport::default();
    let mut saw_content = false;
    // Field count of rejected lines, used to explain an all-rejected file.
    let mut rejected_dims: Vec<usize> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if !saw_content {
            saw_content = true;
            if let Some((count, dim)) = parse_header(&fields) {
                if dim != expected_dim {
                    return Err(Error::format(
                        path,
                        lineno,
                        format!("header declares dimension {dim}, expected {expected_dim}"),
                    ));
                }
                report.header = Some((count, dim));
                continue;
            }
        }
        let (word, values) = (fields[0], &fields[1..]);
        let parsed: Option<Vec<f64>> = if values.len() == expected_dim {
            values.iter().map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite())).collect()
        } else {
            None
        };
        let Some(vector) = parsed else {
            log::warn!("{}:{lineno}: skipping malformed embedding line", path.display());
            report.malformed_lines += 1;
            rejected_dims.push(values.len());
            continue;
        };
        if table.contains(word) {
            report.duplicate_words += 1;
            log::warn!("{}:{lineno}: duplicate word {word:?} ignored", path.display());
            continue;
        }
        table.insert(word, &vector)?;
    }

    if !saw_content {
        return Err(Error::format(path, 0, "empty embedding file"));
    }
    if table.is_empty() {
        let dims = rejected_dims.first().copied().unwrap_or(0);
        if rejected_dims.iter().all(|&d| d == dims) {
            return Err(Error::format(
                path,
                1,
                format!("vectors have dimension {dims}, expected {expected_dim}"),
            ));
        }
        return Err(Error::format(path, 1, "no valid embedding lines"));
    }
    if let Some((count, _)) = report.header {
        if count != table.len() {
            log::warn!(
                "{}: header declares {count} words but {} were loaded",
                path.display(),
                table.len()
            );
        }
    }
    table.report = report;
    Ok(table)
}

fn parse_header(fields: &[&str]) -> Option<(usize, usize)> {
    match fields {
        [count, dim] => Some((count.parse().ok()?, dim.parse().ok()?)),
        _ => None,
    }
}

/// Writes `table` in the text format with a header line.
pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", table.len(), table.dim()).map_err(io)?;
    for word in table.words() {
        write!(w, "{word}").map_err(io)?;
        for v in table.lookup(word).expect("listed word") {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
