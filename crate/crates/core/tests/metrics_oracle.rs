mod support;

use mbridge::metrics::{bleu, cider, evaluate, rouge_l, MAX_N, ROUGE_BETA, THREADS_ENV};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::corpora::{hand_examples, random_items, seeded_corpora, to_corpus};
use support::naive_metrics::{self as naive, Item};

#[test]
fn matches_brute_force_on_fifty_random_corpora() {
    for (trial, items) in seeded_corpora(50).iter().enumerate() {
        let items = items.as_slice();
        let corpus = to_corpus(items);
        let (b, nb) = (bleu(&corpus, MAX_N).unwrap(), naive::bleu(items, MAX_N));
        for k in 0..MAX_N {
            assert!((b[k] - nb[k]).abs() <= 1e-10, "trial {trial} BLEU-{}: {} vs {}", k + 1, b[k], nb[k]);
        }
        let (r, nr) = (rouge_l(&corpus, ROUGE_BETA).unwrap(), naive::rouge_l(items, ROUGE_BETA));
        assert!((r - nr).abs() <= 1e-10, "trial {trial} ROUGE-L: {r} vs {nr}");
        let (c, nc) = (cider(&corpus, MAX_N).unwrap(), naive::cider(items, MAX_N));
        assert!((c - nc).abs() <= 1e-10, "trial {trial} CIDEr: {c} vs {nc}");
    }
}

#[test]
fn hand_examples_are_exact() {
    for (name, got, want) in hand_examples() {
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn thread_count_does_not_change_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items: Vec<Item> = (0..40).flat_map(|_| random_items(&mut rng)).collect();
    let corpus = to_corpus(&items);
    std::env::set_var(THREADS_ENV, "1");
    let one = evaluate(&corpus).unwrap();
    std::env::set_var(THREADS_ENV, "4");
    let four = evaluate(&corpus).unwrap();
    std::env::remove_var(THREADS_ENV);
    assert_eq!(one, four);
}

fn arb_items() -> impl Strategy<Value = Vec<Item>> {
    any::<u64>().prop_map(|seed| random_items(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #[test]
    fn scores_ignore_entry_order(items in arb_items(), rot in 0usize..12) {
        let a = evaluate(&to_corpus(&items)).unwrap();
        let mut shuffled = items;
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let b = evaluate(&to_corpus(&shuffled)).unwrap();
        for i in 0..MAX_N {
            prop_assert!((a.bleu[i] - b.bleu[i]).abs() < 1e-12);
        }
        prop_assert!((a.rouge_l - b.rouge_l).abs() < 1e-12);
        prop_assert!((a.cider - b.cider).abs() < 1e-12);
    }

    #[test]
    fn scores_stay_in_range(items in arb_items()) {
        let r = evaluate(&to_corpus(&items)).unwrap();
        for b in r.bleu {
            prop_assert!((0.0..=1.0).contains(&b));
        }
        prop_assert!((0.0..=1.0).contains(&r.rouge_l));
        prop_assert!((0.0..=10.0 + 1e-9).contains(&r.cider));
    }

    #[test]
    fn rouge_never_drops_when_a_candidate_becomes_a_reference(items in arb_items(), pick in 0usize..12) {
        let before = rouge_l(&to_corpus(&items), ROUGE_BETA).unwrap();
        let mut better = items;
        let i = pick % better.len();
        better[i].candidate = better[i].references[0].clone();
        let after = rouge_l(&to_corpus(&better), ROUGE_BETA).unwrap();
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn rouge_never_drops_when_a_reference_is_added(items in arb_items(), pick in 0usize..12) {
        let before = rouge_l(&to_corpus(&items), ROUGE_BETA).unwrap();
        let mut more = items;
        let i = pick % more.len();
        let extra = more[(i + 1) % more.len()].candidate.clone();
        if !extra.is_empty() {
            more[i].references.push(extra);
        }
        let after = rouge_l(&to_corpus(&more), ROUGE_BETA).unwrap();
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn perfect_candidates_reach_the_maximum(items in arb_items()) {
        let mut perfect = items;
        for it in &mut perfect {
            it.candidate = it.references[0].clone();
            it.references.truncate(1);
        }
        let r = evaluate(&to_corpus(&perfect)).unwrap();
        prop_assert_eq!(r.rouge_l, 1.0);
        let long_enough = perfect.iter().all(|it| it.candidate.len() >= MAX_N);
        if long_enough {
            for b in r.bleu {
                prop_assert!((b - 1.0).abs() < 1e-12);
            }
        }
    }
}
