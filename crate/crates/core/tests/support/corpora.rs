//! Random toy corpora and the hand-computed metric examples.

use mbridge::metrics::{bleu, cider, rouge_l, EvalCorpus, ROUGE_BETA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::naive_metrics::Item;

const WORDS: [&str; 7] = ["a", "red", "blue", "circle", "square", "and", "small"];

pub fn random_items(rng: &mut ChaCha8Rng) -> Vec<Item> {
    let sentence = |rng: &mut ChaCha8Rng, min: usize| -> Vec<String> {
        let len = rng.random_range(min..=8);
        (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
    };
    let n = rng.random_range(2..=12);
    (0..n)
        .map(|_| {
            let refs = rng.random_range(1..=3);
            Item { candidate: sentence(rng, 0), references: (0..refs).map(|_| sentence(rng, 1)).collect() }
        })
        .collect()
}

/// The fixed sequence of corpora every oracle comparison uses.
pub fn seeded_corpora(count: usize) -> Vec<Vec<Item>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..count).map(|_| random_items(&mut rng)).collect()
}

pub fn to_corpus(items: &[Item]) -> EvalCorpus {
    let cands: Vec<(u64, Vec<String>)> = items.iter().enumerate().map(|(i, it)| (i as u64, it.candidate.clone())).collect();
    let refs: Vec<(u64, Vec<String>)> = items
        .iter()
        .enumerate()
        .flat_map(|(i, it)| it.references.iter().map(move |r| (i as u64, r.clone())))
        .collect();
    EvalCorpus::from_words(&cands, &refs).unwrap()
}

fn items(pairs: &[(&str, &[&str])]) -> Vec<Item> {
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    pairs.iter().map(|(c, rs)| Item { candidate: words(c), references: rs.iter().map(|r| words(r)).collect() }).collect()
}

/// `(name, computed, hand value)` for every worked example.
pub fn hand_examples() -> Vec<(&'static str, f64, f64)> {
    let identity = items(&[("a red circle and a blue square", &["a red circle and a blue square"])]);
    let disjoint = items(&[("x y z", &["a b c"])]);
    let clipped = items(&[("the the the", &["the cat"])]);
    let lcs = items(&[("a b c d", &["a c d e"])]);
    let unique = items(&[("a b c d", &["a b c d"]), ("e f g h", &["e f g h"]), ("i j k l", &["i j k l"])]);
    let no_overlap = items(&[("x y", &["a b"]), ("z w", &["c d"])]);
    let b = |it: &[Item], n| bleu(&to_corpus(it), n).unwrap();
    let r = |it: &[Item]| rouge_l(&to_corpus(it), ROUGE_BETA).unwrap();
    let c = |it: &[Item]| cider(&to_corpus(it), 4).unwrap();
    vec![
        ("BLEU-4 of an identical pair", b(&identity, 4)[3], 1.0),
        ("BLEU-1 with no shared unigram", b(&disjoint, 4)[0], 0.0),
        ("clipped unigram precision", b(&clipped, 1)[0], 1.0 / 3.0),
        ("ROUGE-L of an identical pair", r(&identity), 1.0),
        ("ROUGE-L of disjoint tokens", r(&disjoint), 0.0),
        ("ROUGE-L with LCS 3 of 4", r(&lcs), 0.75),
        ("CIDEr with unique n-grams", c(&unique), 10.0),
        ("CIDEr with no overlap", c(&no_overlap), 0.0),
    ]
}
