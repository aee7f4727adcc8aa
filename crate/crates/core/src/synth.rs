//! Clustered synthetic corpora with known relation structure.
//!
//! Every cluster has a Gaussian centroid and each word is its centroid plus
//! isotropic noise. Words of one cluster are synonyms of each other; words of
//! two designated *opposed* clusters are antonyms of each other. Opposed
//! clusters share half of their centroid, so antonyms stay distributionally
//! close, as they do in real embedding spaces.
//!
//! Because relations are defined at the cluster level, symmetry, transitivity
//! and trans-transitivity hold exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, RelationPair, Split, SplitDataset, WordClass};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Share of an opposed cluster's centroid inherited from its partner.
const OPPOSED_SHARE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub words_per_cluster: usize,
    /// Opposed cluster pairs, taken as (0, 1), (2, 3), ...
    pub antonym_cluster_pairs: usize,
    pub dim: usize,
    /// Per-component standard deviation of word noise around unit-variance
    /// centroids.
    pub noise: f64,
    pub seed: u64,
    /// Pairs drawn for each relation; `None` takes as many as both
    /// relations can supply, capped at 300.
    pub pairs_per_class: Option<usize>,
    /// Train and test vocabularies are made disjoint.
    pub lexical: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clusters: 4,
            words_per_cluster: 25,
            antonym_cluster_pairs: 2,
            dim: 50,
            noise: 0.1,
            seed: 0,
            pairs_per_class: None,
            lexical: false,
        }
    }
}

impl SynthConfig {
    pub fn word(cluster: usize, index: usize) -> String {
        format!("c{cluster}_w{index:03}")
    }

    fn validate(&self) -> Result<()> {
        if self.n_clusters < 2 {
            return Err(Error::Config("synthetic corpus needs at least 2 clusters".into()));
        }
        if self.words_per_cluster < 2 {
            return Err(Error::Config("synthetic clusters need at least 2 words".into()));
        }
        if self.antonym_cluster_pairs == 0 || 2 * self.antonym_cluster_pairs > self.n_clusters {
            return Err(Error::Config(format!(
                "{} opposed cluster pair(s) do not fit {} clusters",
                self.antonym_cluster_pairs, self.n_clusters
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("synthetic dimension must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and nonnegative", self.noise)));
        }
        Ok(())
    }
}

/// Builds a corpus and matching embedding table. Each relation is split
/// 70/10/20 into train, dev and test.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(SplitDataset, EmbeddingTable)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;

    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
    let mut centroids: Vec<Vec<f64>> = (0..cfg.n_clusters).map(|_| gaussian(&mut rng)).collect();
    let keep = (1.0 - OPPOSED_SHARE * OPPOSED_SHARE).sqrt();
    for k in 0..cfg.antonym_cluster_pairs {
        let (a, b) = (2 * k, 2 * k + 1);
        let partner = centroids[a].clone();
        for (x, p) in centroids[b].iter_mut().zip(&partner) {
            *x = OPPOSED_SHARE * p + keep * *x;
        }
    }

    let mut table = EmbeddingTable::new(d, cfg.seed)?;
    for (c, centroid) in centroids.iter().enumerate() {
        for i in 0..cfg.words_per_cluster {
            let v: Vec<f64> = centroid
                .iter()
                .map(|&m| m + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            table.insert(&SynthConfig::word(c, i), &v)?;
        }
    }

    let n = cfg.words_per_cluster;
    let mut synonyms = Vec::new();
    for c in 0..cfg.n_clusters {
        for i in 0..n {
            for j in i + 1..n {
                synonyms.push(((c, i), (c, j)));
            }
        }
    }
    let mut antonyms = Vec::new();
    for k in 0..cfg.antonym_cluster_pairs {
        for i in 0..n {
            for j in 0..n {
                antonyms.push(((2 * k, i), (2 * k + 1, j)));
            }
        }
    }

    let available = synonyms.len().min(antonyms.len());
    let per_class = match cfg.pairs_per_class {
        Some(k) if k > available => {
            return Err(Error::Config(format!(
                "{k} pairs per class requested but only {available} are available"
            )))
        }
        Some(0) => return Err(Error::Config("pairs_per_class must be positive".into())),
        Some(k) => k,
        None => available.min(300),
    };

    // In a lexical split each cluster donates its first 70% of words to the
    // train side and the rest to the held-out side; mixed pairs are dropped.
    let train_side = |(_, i): (usize, usize)| (i as f64) < 0.7 * n as f64;

    let mut splits: [Vec<RelationPair>; 3] = Default::default();
    for (label, mut pool) in [(Label::Synonym, synonyms), (Label::Antonym, antonyms)] {
        pool.shuffle(&mut rng);
        pool.truncate(per_class);
        let mut pairs: Vec<RelationPair> = pool
            .into_iter()
            .map(|(a, b)| {
                let (h, t) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                RelationPair {
                    head: SynthConfig::word(h.0, h.1),
                    tail: SynthConfig::word(t.0, t.1),
                    label,
                    split: Split::Train,
                }
            })
            .collect();
        if cfg.lexical {
            let side = |w: &str| {
                let (c, i) = parse_word(w);
                train_side((c, i))
            };
            let (train, held): (Vec<_>, Vec<_>) = pairs
                .drain(..)
                .filter(|p| side(&p.head) == side(&p.tail))
                .partition(|p| side(&p.head));
            let n_dev = held.len() / 3;
            assign(&mut splits, train, Split::Train);
            let mut held = held.into_iter();
            assign(&mut splits, held.by_ref().take(n_dev).collect(), Split::Dev);
            assign(&mut splits, held.collect(), Split::Test);
        } else {
            let total = pairs.len();
            let n_train = (0.7 * total as f64).round() as usize;
            let n_dev = (0.1 * total as f64).round() as usize;
            let mut it = pairs.into_iter();
            assign(&mut splits, it.by_ref().take(n_train).collect(), Split::Train);
            assign(&mut splits, it.by_ref().take(n_dev).collect(), Split::Dev);
            assign(&mut splits, it.collect(), Split::Test);
        }
    }
    for s in &mut splits {
        s.shuffle(&mut rng);
    }
    let [train, dev, test] = splits;
    if train.is_empty() || dev.is_empty() || test.is_empty() {
        return Err(Error::Config("synthetic corpus too small to fill every split".into()));
    }
    Ok((SplitDataset::new(WordClass::Other, train, dev, test), table))
}

fn assign(splits: &mut [Vec<RelationPair>; 3], pairs: Vec<RelationPair>, split: Split) {
    let slot = match split {
        Split::Train => 0,
        Split::Dev => 1,
        Split::Test => 2,
    };
    splits[slot].extend(pairs.into_iter().map(|p| RelationPair { split, ..p }));
}

/// `(cluster, index)` of a generated word.
pub fn parse_word(word: &str) -> (usize, usize) {
    let (c, i) = word
        .trim_start_matches('c')
        .split_once("_w")
        .expect("generated word names have the form c<k>_w<i>");
    (c.parse().expect("cluster id"), i.parse().expect("word index"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            words_per_cluster: 10,
            noise,
            seed: 3,
            pairs_per_class: Some(150),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn balanced_with_requested_sizes() {
        let (ds, table) = generate_synthetic(&small(0.05)).unwrap();
        let all: Vec<_> = ds.all_pairs().collect();
        assert_eq!(all.len(), 300);
        assert_eq!(all.iter().filter(|p| p.label == Label::Antonym).count(), 150);
        assert_eq!(ds.sizes(), [210, 30, 60]);
        assert_eq!(table.len(), 40);
    }

    #[test]
    fn relations_follow_clusters() {
        let (ds, _) = generate_synthetic(&small(0.1)).unwrap();
        for p in ds.all_pairs() {
            let (ch, ct) = (parse_word(&p.head).0, parse_word(&p.tail).0);
            match p.label {
                Label::Synonym => assert_eq!(ch, ct),
                Label::Antonym => assert_eq!(ch / 2, ct / 2),
            }
        }
    }

    #[test]
    fn noiseless_cosine_separates_classes() {
        let (ds, table) = generate_synthetic(&small(0.0)).unwrap();
        let cos = |p: &RelationPair| cosine(table.lookup(&p.head).unwrap(), table.lookup(&p.tail).unwrap());
        let syn_min = ds.all_pairs().filter(|p| p.label == Label::Synonym).map(cos).fold(f64::MAX, f64::min);
        let ant_max = ds.all_pairs().filter(|p| p.label == Label::Antonym).map(cos).fold(f64::MIN, f64::max);
        assert!(ant_max < syn_min);
    }

    #[test]
    fn lexical_split_has_disjoint_vocabularies() {
        let cfg = SynthConfig {
            lexical: true,
            ..SynthConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        ds.check_lexical_split().unwrap();
    }

    #[test]
    fn infeasible_sizes_are_config_errors() {
        for cfg in [
            SynthConfig {
                n_clusters: 1,
                ..SynthConfig::default()
            },
            SynthConfig {
                antonym_cluster_pairs: 3,
                ..SynthConfig::default()
            },
            SynthConfig {
                pairs_per_class: Some(10_000),
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small(0.1)).unwrap();
        let b = generate_synthetic(&small(0.1)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.lookup("c2_w005"), b.1.lookup("c2_w005"));
    }
}
