use std::fmt::Write as _;
use std::fs;

use icenet::dataset::{load_dataset, Label, WordClass, RANDOM_SPLIT_SIZES};

/// Writes `n` distinct pairs over a generated vocabulary, alternating labels.
fn split_file(n: usize, offset: usize) -> String {
    let mut s = String::new();
    for i in offset..offset + n {
        let label = if i % 2 == 0 { "antonym" } else { "synonym" };
        let _ = writeln!(s, "adj{}\tadj{}\t{label}", i % 997, 997 + i / 997 * 13 + i % 13);
    }
    s
}

#[test]
fn published_adjective_sizes_load_exactly() {
    let [train, dev, test] = RANDOM_SPLIT_SIZES
        .iter()
        .find(|(c, _)| *c == WordClass::Adjective)
        .unwrap()
        .1;
    assert_eq!([train, dev, test], [5562, 398, 1986]);
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.tsv"), split_file(train, 0)).unwrap();
    fs::write(dir.path().join("dev.tsv"), split_file(dev, train)).unwrap();
    fs::write(dir.path().join("test.tsv"), split_file(test, train + dev)).unwrap();

    let ds = load_dataset(dir.path(), WordClass::Adjective).unwrap();
    assert_eq!(ds.sizes(), [5562, 398, 1986]);
    let (ant, syn) = ds.class_balance(icenet::dataset::Split::Train);
    assert_eq!(ant + syn, 5562);
    assert!(ds.all_pairs().all(|p| matches!(p.label, Label::Antonym | Label::Synonym)));

    let again = load_dataset(dir.path(), WordClass::Adjective).unwrap();
    assert_eq!(ds, again);
}
