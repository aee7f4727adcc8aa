//! Antonym/synonym pair datasets and negative sampling.
//!
//! A dataset directory holds one tab-separated file per split. Each line is
//! `head<TAB>tail<TAB>label`, where the label is `0`/`synonym` or
//! `1`/`antonym`. Split files are looked up as `train.tsv`, `dev.tsv` and
//! `test.tsv`; the upstream benchmark naming `<class>-pairs.train`,
//! `<class>-pairs.val` and `<class>-pairs.test` is accepted as well.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Synonym = 0,
    Antonym = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Antonym
        } else {
            Label::Synonym
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Synonym => Label::Antonym,
            Label::Antonym => Label::Synonym,
        }
    }

    fn parse(token: &str) -> Option<Label> {
        match token.trim().to_ascii_lowercase().as_str() {
            "0" | "syn" | "synonym" => Some(Label::Synonym),
            "1" | "ant" | "antonym" => Some(Label::Antonym),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Synonym => "synonym",
            Label::Antonym => "antonym",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    fn file_names(self, class: WordClass) -> [String; 2] {
        let (plain, upstream) = match self {
            Split::Train => ("train", "train"),
            Split::Dev => ("dev", "val"),
            Split::Test => ("test", "test"),
        };
        [format!("{plain}.tsv"), format!("{class}-pairs.{upstream}")]
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "val" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Adjective,
    Noun,
    Verb,
    #[default]
    Other,
}

impl std::str::FromStr for WordClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjective" | "adj" => Ok(WordClass::Adjective),
            "noun" => Ok(WordClass::Noun),
            "verb" => Ok(WordClass::Verb),
            "other" => Ok(WordClass::Other),
            other => Err(Error::Config(format!("unknown word class {other:?}"))),
        }
    }
}

impl fmt::Display for WordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordClass::Adjective => "adjective",
            WordClass::Noun => "noun",
            WordClass::Verb => "verb",
            WordClass::Other => "other",
        })
    }
}

/// Published benchmark sizes `(train, dev, test)` for the random split.
pub const RANDOM_SPLIT_SIZES: [(WordClass, [usize; 3]); 3] = [
    (WordClass::Adjective, [5562, 398, 1986]),
    (WordClass::Noun, [2836, 206, 1020]),
    (WordClass::Verb, [2534, 182, 908]),
];

/// Published benchmark sizes `(train, dev, test)` for the lexical split.
pub const LEXICAL_SPLIT_SIZES: [(WordClass, [usize; 3]); 3] = [
    (WordClass::Adjective, [4227, 303, 1498]),
    (WordClass::Noun, [2667, 191, 954]),
    (WordClass::Verb, [2034, 146, 712]),
];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationPair {
    pub head: String,
    pub tail: String,
    pub label: Label,
    pub split: Split,
}

/// Sorted word list giving every token a stable row index.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let words: Vec<String> = set.into_iter().collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
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

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

/// Head and tail vocabulary rows of a list of pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairIndex {
    pub heads: Vec<usize>,
    pub tails: Vec<usize>,
}

impl PairIndex {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> PairIndex {
        PairIndex {
            heads: rows.iter().map(|&r| self.heads[r]).collect(),
            tails: rows.iter().map(|&r| self.tails[r]).collect(),
        }
    }
}

/// Warnings raised while parsing split files.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetWarnings {
    pub duplicate_pairs: usize,
    pub self_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub word_class: WordClass,
    pub train: Vec<RelationPair>,
    pub dev: Vec<RelationPair>,
    pub test: Vec<RelationPair>,
    vocab: Vocabulary,
    pub warnings: DatasetWarnings,
}

impl SplitDataset {
    pub fn new(
        word_class: WordClass,
        train: Vec<RelationPair>,
        dev: Vec<RelationPair>,
        test: Vec<RelationPair>,
    ) -> Self {
        let vocab = Vocabulary::new(
            train
                .iter()
                .chain(&dev)
                .chain(&test)
                .flat_map(|p| [p.head.clone(), p.tail.clone()]),
        );
        SplitDataset {
            word_class,
            train,
            dev,
            test,
            vocab,
            warnings: DatasetWarnings::default(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn split(&self, split: Split) -> &[RelationPair] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Every pair of every split, in train, dev, test order.
    pub fn all_pairs(&self) -> impl Iterator<Item = &RelationPair> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.dev.len(), self.test.len()]
    }

    /// `(antonyms, synonyms)` in a split.
    pub fn class_balance(&self, split: Split) -> (usize, usize) {
        let pairs = self.split(split);
        let ant = pairs.iter().filter(|p| p.label == Label::Antonym).count();
        (ant, pairs.len() - ant)
    }

    pub fn split_vocab(&self, split: Split) -> BTreeSet<&str> {
        self.split(split)
            .iter()
            .flat_map(|p| [p.head.as_str(), p.tail.as_str()])
            .collect()
    }

    /// Words shared by the train and test vocabularies.
    pub fn train_test_overlap(&self) -> usize {
        let train = self.split_vocab(Split::Train);
        self.split_vocab(Split::Test).intersection(&train).count()
    }

    /// Fails when the train and test vocabularies share a word.
    pub fn check_lexical_split(&self) -> Result<()> {
        match self.train_test_overlap() {
            0 => Ok(()),
            n => Err(Error::Contract(format!(
                "lexical split violated: {n} word(s) shared by train and test"
            ))),
        }
    }

    /// Vocabulary row indices of `pairs`.
    pub fn indices<'a, I>(&self, pairs: I) -> Result<PairIndex>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let lookup = |w: &str| self.vocab.index(w).ok_or_else(|| Error::MissingWord(w.to_string()));
        let mut idx = PairIndex::default();
        for (h, t) in pairs {
            idx.heads.push(lookup(h)?);
            idx.tails.push(lookup(t)?);
        }
        Ok(idx)
    }

    pub fn pair_index(&self, pairs: &[RelationPair]) -> Result<PairIndex> {
        self.indices(pairs.iter().map(|p| (p.head.as_str(), p.tail.as_str())))
    }

    /// Writes the splits as `train.tsv`, `dev.tsv` and `test.tsv` into `dir`.
    pub fn write_tsv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(format!("{split}.tsv"));
            let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
            for p in self.split(split) {
                writeln!(f, "{}\t{}\t{}", p.head, p.tail, p.label.index()).map_err(|e| Error::io(&path, e))?;
            }
            f.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn load_dataset(dir: impl AsRef<Path>, word_class: WordClass) -> Result<SplitDataset> {
    let dir = dir.as_ref();
    let mut warnings = DatasetWarnings::default();
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = split_path(dir, split, word_class)?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        splits.push(parse_split(&text, &path, split, &mut warnings)?);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let mut ds = SplitDataset::new(word_class, train, dev, test);
    ds.warnings = warnings;
    Ok(ds)
}

fn split_path(dir: &Path, split: Split, class: WordClass) -> Result<PathBuf> {
    let names = split.file_names(class);
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(&names[0]),
                std::io::Error::new(std::io::ErrorKind::NotFound, "split file not found"),
            )
        })
}

/// Parses one split file. Duplicated lines are kept and counted; lines whose
/// head equals their tail are dropped and counted.
pub fn parse_split(
    text: &str,
    path: &Path,
    split: Split,
    warnings: &mut DatasetWarnings,
) -> Result<Vec<RelationPair>> {
    let mut pairs = Vec::new();
    let mut seen: HashSet<(String, String, Label)> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::format(path, lineno, "expected head<TAB>tail<TAB>label"));
        }
        let (head, tail) = (fields[0].trim(), fields[1].trim());
        let label = Label::parse(fields[2])
            .ok_or_else(|| Error::format(path, lineno, format!("unknown label {:?}", fields[2].trim())))?;
        if head.is_empty() || tail.is_empty() {
            return Err(Error::format(path, lineno, "empty word"));
        }
        if head == tail {
            log::warn!("{}:{lineno}: dropping pair with identical words", path.display());
            warnings.self_pairs += 1;
            continue;
        }
        if !seen.insert((head.to_string(), tail.to_string(), label)) {
            warnings.duplicate_pairs += 1;
        }
        pairs.push(RelationPair {
            head: head.to_string(),
            tail: tail.to_string(),
            label,
            split,
        });
    }
    if pairs.is_empty() {
        return Err(Error::format(path, 0, "split file contains no pairs"));
    }
    Ok(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    RandomWord,
    CrossRelation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    /// Index of the positive pair in the training split.
    pub source: usize,
    pub head: String,
    pub tail: String,
    pub kind: CorruptionKind,
}

const MAX_SAMPLING_ATTEMPTS: usize = 256;

/// Draws `k_per_positive` corruptions for every training pair labeled `relation`.
///
/// Each draw is, with equal probability, either a random-word corruption
/// (the head or the tail replaced by a uniform vocabulary word) or a training
/// pair of the opposite relation used as is. Draws matching a positive of
/// `relation` in either orientation are rejected and redrawn.
pub fn sample_negatives(
    ds: &SplitDataset,
    relation: Label,
    k_per_positive: usize,
    seed: u64,
) -> Result<Vec<NegativeSample>> {
    if k_per_positive == 0 {
        return Err(Error::Contract("k_per_positive must be at least 1".into()));
    }
    let vocab = ds.vocab().words();
    if vocab.len() <= 2 {
        return Err(Error::Sampling(format!(
            "vocabulary of {} word(s) is too small to corrupt",
            vocab.len()
        )));
    }
    let positives: HashSet<(&str, &str)> = ds
        .train
        .iter()
        .filter(|p| p.label == relation)
        .flat_map(|p| [(p.head.as_str(), p.tail.as_str()), (p.tail.as_str(), p.head.as_str())])
        .collect();
    let opposite: Vec<&RelationPair> = ds
        .train
        .iter()
        .filter(|p| p.label == relation.opposite())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (source, pos) in ds.train.iter().enumerate() {
        if pos.label != relation {
            continue;
        }
        for _ in 0..k_per_positive {
            let mut accepted = None;
            for _ in 0..MAX_SAMPLING_ATTEMPTS {
                let cross = rng.random_bool(0.5) && !opposite.is_empty();
                let (head, tail, kind) = if cross {
                    let p = opposite[rng.random_range(0..opposite.len())];
                    (p.head.as_str(), p.tail.as_str(), CorruptionKind::CrossRelation)
                } else {
                    let word = vocab[rng.random_range(0..vocab.len())].as_str();
                    if rng.random_bool(0.5) {
                        (word, pos.tail.as_str(), CorruptionKind::RandomWord)
                    } else {
                        (pos.head.as_str(), word, CorruptionKind::RandomWord)
                    }
                };
                if head != tail && !positives.contains(&(head, tail)) {
                    accepted = Some(NegativeSample {
                        source,
                        head: head.to_string(),
                        tail: tail.to_string(),
                        kind,
                    });
                    break;
                }
            }
            out.push(accepted.ok_or_else(|| {
                Error::Sampling(format!(
                    "no valid corruption of ({}, {}) after {MAX_SAMPLING_ATTEMPTS} draws",
                    pos.head, pos.tail
                ))
            })?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(h: &str, t: &str, label: Label) -> RelationPair {
        RelationPair {
            head: h.into(),
            tail: t.into(),
            label,
            split: Split::Train,
        }
    }

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn toy_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.tsv", "hot\tcold\t1\nbig\tlarge\tsynonym\nfast\tquick\t0\n");
        write(dir.path(), "dev.tsv", "hot\tcold\tantonym\n");
        write(dir.path(), "test.tsv", "big\tlarge\t0\n");
        let ds = load_dataset(dir.path(), WordClass::Adjective).unwrap();
        assert_eq!(ds.train.len(), 3);
        assert!(ds.vocab().len() <= 6);
        assert_eq!(ds.train[0].label, Label::Antonym);
        assert_eq!(ds.class_balance(Split::Train), (1, 2));
    }

    #[test]
    fn upstream_file_names_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "noun-pairs.train", "a\tb\t1\n");
        write(dir.path(), "noun-pairs.val", "a\tc\t0\n");
        write(dir.path(), "noun-pairs.test", "b\tc\t0\n");
        let ds = load_dataset(dir.path(), WordClass::Noun).unwrap();
        assert_eq!(ds.sizes(), [1, 1, 1]);
    }

    #[test]
    fn duplicates_are_kept_and_counted() {
        let mut w = DatasetWarnings::default();
        let pairs = parse_split("a\tb\t1\na\tb\t1\nc\td\t0\n", Path::new("x"), Split::Train, &mut w).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(w.duplicate_pairs, 1);
    }

    #[test]
    fn unknown_label_reports_line_number() {
        let mut w = DatasetWarnings::default();
        let err = parse_split("a\tb\t1\nc\td\tmaybe\n", Path::new("f.tsv"), Split::Dev, &mut w).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_split_is_an_error() {
        let mut w = DatasetWarnings::default();
        assert!(parse_split("\n", Path::new("f"), Split::Test, &mut w).is_err());
    }

    #[test]
    fn self_pairs_are_dropped() {
        let mut w = DatasetWarnings::default();
        let pairs = parse_split("a\ta\t0\na\tb\t0\n", Path::new("f"), Split::Train, &mut w).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(w.self_pairs, 1);
    }

    fn small() -> SplitDataset {
        let train = vec![
            pair("hot", "cold", Label::Antonym),
            pair("big", "large", Label::Synonym),
            pair("small", "little", Label::Synonym),
            pair("up", "down", Label::Antonym),
        ];
        SplitDataset::new(WordClass::Other, train, vec![], vec![])
    }

    #[test]
    fn negatives_are_counted_and_reproducible() {
        let ds = small();
        let a = sample_negatives(&ds, Label::Synonym, 2, 9).unwrap();
        let b = sample_negatives(&ds, Label::Synonym, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|n| ds.train[n.source].label == Label::Synonym));
    }

    #[test]
    fn sampling_rejects_tiny_vocabulary_and_zero_k() {
        let ds = SplitDataset::new(WordClass::Other, vec![pair("a", "b", Label::Synonym)], vec![], vec![]);
        assert!(matches!(sample_negatives(&ds, Label::Synonym, 1, 0), Err(Error::Sampling(_))));
        assert!(matches!(sample_negatives(&small(), Label::Synonym, 0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn lexical_split_check() {
        let ds = SplitDataset::new(
            WordClass::Other,
            vec![pair("a", "b", Label::Synonym)],
            vec![],
            vec![RelationPair {
                split: Split::Test,
                ..pair("c", "d", Label::Antonym)
            }],
        );
        assert!(ds.check_lexical_split().is_ok());
        let leaky = SplitDataset::new(
            WordClass::Other,
            vec![pair("a", "b", Label::Synonym)],
            vec![],
            vec![pair("a", "d", Label::Antonym)],
        );
        assert_eq!(leaky.train_test_overlap(), 1);
        assert!(leaky.check_lexical_split().is_err());
    }
}
