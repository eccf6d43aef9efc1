use std::collections::BTreeSet;

use mbridge::synthdata::*;
use mbridge::vocab::{BOS, EOS};
use proptest::prelude::*;

#[test]
fn ten_thousand_seeds_satisfy_the_scene_contract() {
    for seed in 0..10_000u64 {
        let scene = generate_scene(seed);
        assert!(scene.is_valid(), "seed {seed}: {scene:?}");
        assert_eq!(scene, generate_scene(seed));
    }
}

#[test]
fn a_thousand_seeds_cover_at_least_three_object_counts() {
    let counts: BTreeSet<usize> = (0..1000).map(|s| generate_scene(s).objects.len()).collect();
    assert!(counts.len() >= 3, "{counts:?}");
}

#[test]
fn single_small_red_circle() {
    let scene = Scene { objects: vec![Object { shape: 0, color: 0, size: 0, row: 0, col: 0 }], seed: 0 };
    let vocab = corpus_vocabulary();
    let seq = vocab.encode(&caption_words(&scene));
    let tokens: Vec<&str> = seq.ids().iter().map(|&i| vocab.token(i).unwrap()).collect();
    assert_eq!(tokens, ["<bos>", "a", "small", "red", "circle", "<eos>"]);
    assert_eq!(seq.ids()[0], BOS);
    assert_eq!(*seq.ids().last().unwrap(), EOS);
}

#[test]
fn two_objects_are_joined_by_one_and() {
    let seed = (0..).find(|&s| generate_scene(s).objects.len() == 2).unwrap();
    let words = caption_words(&generate_scene(seed));
    assert_eq!(words.iter().filter(|w| *w == "and").count(), 1);
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn same_attribute_rows_are_closer_than_different_ones() {
    let space = FeatureSpace::new(7, 32).unwrap();
    let rows: Vec<((usize, usize, usize), Vec<f64>)> = (0..100u64)
        .flat_map(|id| {
            let scene = generate_scene(scene_seed(7, id));
            let feats = space.featurize(&scene, 0.1);
            scene.objects.iter().map(|o| o.attributes()).zip(feats).collect::<Vec<_>>()
        })
        .collect();
    let (mut same, mut diff) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = cosine(&rows[i].1, &rows[j].1);
            let acc = if rows[i].0 == rows[j].0 { &mut same } else { &mut diff };
            acc.0 += c;
            acc.1 += 1;
        }
    }
    assert!(same.1 > 0 && diff.1 > 0);
    let (s, d) = (same.0 / same.1 as f64, diff.0 / diff.1 as f64);
    assert!(s > d, "same {s} vs different {d}");
}

#[test]
fn splits_are_disjoint_and_sized_by_ratio() {
    let corpus = generate_corpus(&CorpusSpec::default()).unwrap();
    assert_eq!((corpus.train.len(), corpus.val.len(), corpus.test.len()), (800, 100, 100));
    let mut ids = BTreeSet::new();
    for r in corpus.train.iter().chain(&corpus.val).chain(&corpus.test) {
        assert!(ids.insert(r.scene_id), "scene {} appears twice", r.scene_id);
        assert_eq!(r.features.len(), parse_caption(&r.caption).unwrap().len());
    }
}

#[test]
fn corpus_vocabulary_is_small() {
    let vocab = corpus_vocabulary();
    let content = vocab.tokens().iter().filter(|t| !t.starts_with('<')).count();
    assert!(content <= 16, "{content} content words");
    let corpus = generate_corpus(&CorpusSpec { n_scenes: 200, ..Default::default() }).unwrap();
    for r in &corpus.train {
        assert!(r.caption.iter().all(|w| vocab.contains(w)));
    }
}

#[test]
fn rebuilding_gives_byte_identical_files() {
    let spec = CorpusSpec { n_scenes: 50, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_corpus(a.path(), &spec).unwrap();
    build_corpus(b.path(), &spec).unwrap();
    for name in SPLIT_FILES.iter().chain([&MANIFEST_FILE]) {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let manifest = read_manifest(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.generator_version, GENERATOR_VERSION);
    assert_eq!(read_records(&a.path().join("train.jsonl")).unwrap(), generate_corpus(&spec).unwrap().train);
}

#[test]
fn unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let err = build_corpus(&file.join("sub"), &CorpusSpec { n_scenes: 10, ..Default::default() }).unwrap_err();
    assert!(matches!(err, mbridge::Error::Io { .. }), "{err:?}");
}

proptest! {
    #[test]
    fn captions_parse_back_to_the_attribute_multiset(seed in any::<u64>()) {
        let scene = generate_scene(seed);
        let mut attrs: Vec<_> = scene.objects.iter().map(Object::attributes).collect();
        attrs.sort();
        prop_assert_eq!(parse_caption(&caption_words(&scene)).unwrap(), attrs);
    }

    #[test]
    fn rows_match_object_count_and_width(seed in any::<u64>(), d_v in 16usize..48) {
        let scene = generate_scene(seed);
        let rows = FeatureSpace::new(seed, d_v).unwrap().featurize(&scene, 0.1);
        prop_assert_eq!(rows.len(), scene.objects.len());
        prop_assert!(rows.iter().all(|r| r.len() == d_v && r.iter().all(|v| v.is_finite())));
    }
}
