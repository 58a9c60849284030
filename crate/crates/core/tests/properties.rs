use std::collections::BTreeMap;

use proptest::collection::vec;
use proptest::prelude::*;

use mner_core::checkpoint::Checkpoint;
use mner_core::config::KvConfig;
use mner_core::crf::{log_partition, path_score, viterbi_decode, CrfParams};
use mner_core::data::{load_tmn, synthetic_vocab};
use mner_core::metrics::{evaluate, parse_report, report_format};
use mner_core::model::ModelKind;
use mner_core::seqdata::corpus::sidecar_of;
use mner_core::seqdata::{
    extract_spans, parse_conll, serialize_conll, serialize_tmn, top_k_indices, Example, ImageWord, ParseMode, Sidecar,
    Tag, TagScheme, NUM_TAGS,
};
use mner_core::tensor::Tensor;

fn tag() -> impl Strategy<Value = Tag> {
    (0..NUM_TAGS).prop_map(|i| Tag::from_index(i).unwrap())
}

fn legal_tags(max: usize) -> impl Strategy<Value = Vec<Tag>> {
    vec(tag(), 1..max).prop_map(|mut t| {
        TagScheme::repair(&mut t);
        t
    })
}

fn corpus() -> impl Strategy<Value = Vec<(Vec<Tag>, Vec<Tag>)>> {
    vec((1usize..12).prop_flat_map(|n| (vec(tag(), n), vec(tag(), n))), 1..6)
}

fn word() -> impl Strategy<Value = String> {
    "[A-Za-z][a-z0-9@#]{0,7}"
}

fn example(id: usize) -> impl Strategy<Value = Example> {
    (1usize..8)
        .prop_flat_map(|n| {
            (
                vec(word(), n),
                legal_tags(n + 1).prop_map(move |mut t| {
                    t.resize(n, Tag::O);
                    TagScheme::repair(&mut t);
                    t
                }),
            )
        })
        .prop_map(move |(tokens, tags)| {
            let mut ex = Example::new(format!("img{id}"), tokens, tags);
            ex.image_words = vec![ImageWord::new("street_sign", 0.5), ImageWord::new("dog", 0.25)];
            ex
        })
}

fn crf_problem() -> impl Strategy<Value = (Tensor, CrfParams)> {
    (1usize..7, any::<u64>()).prop_map(|(n, seed)| {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = CrfParams {
            transitions: Tensor::uniform(vec![NUM_TAGS, NUM_TAGS], -2.0, 2.0, &mut rng),
            start: Tensor::uniform(vec![1, NUM_TAGS], -2.0, 2.0, &mut rng),
            stop: Tensor::uniform(vec![1, NUM_TAGS], -2.0, 2.0, &mut rng),
        };
        (Tensor::uniform(vec![n, NUM_TAGS], -3.0, 3.0, &mut rng), params)
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 128,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn repair_yields_legal_sequences_with_disjoint_spans(mut tags in vec(tag(), 0..20)) {
        TagScheme::repair(&mut tags);
        TagScheme::check_sequence(&tags).unwrap();
        let spans = extract_spans(&tags).unwrap();
        for w in spans.windows(2) {
            prop_assert!(w[0].end < w[1].start);
        }
    }

    #[test]
    fn overall_counts_are_sums_of_per_type_counts(pairs in corpus()) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = evaluate(&gold, &pred).unwrap();
        let sum = |f: fn(&mner_core::metrics::Scores) -> usize| r.per_type.iter().map(f).sum::<usize>();
        prop_assert_eq!(r.overall.counts.true_positives, sum(|s| s.counts.true_positives));
        prop_assert_eq!(r.overall.counts.predicted, sum(|s| s.counts.predicted));
        prop_assert_eq!(r.overall.counts.gold, sum(|s| s.counts.gold));
        for s in r.per_type.iter().chain([&r.overall]) {
            prop_assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall) && (0.0..=1.0).contains(&s.f1));
        }
    }

    #[test]
    fn evaluate_ignores_sentence_order(pairs in corpus(), rot in 0usize..6) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let k = rot % gold.len();
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        g2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert_eq!(evaluate(&gold, &pred).unwrap(), evaluate(&g2, &p2).unwrap());
    }

    #[test]
    fn identical_predictions_score_one(gold in vec(legal_tags(12), 1..5)) {
        let r = evaluate(&gold, &gold).unwrap();
        if r.overall.counts.gold > 0 {
            prop_assert_eq!(r.overall.f1, 1.0);
        } else {
            prop_assert!(r.overall.zero_support());
        }
    }

    #[test]
    fn report_table_parses_back(pairs in corpus()) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = evaluate(&gold, &pred).unwrap();
        let parsed = parse_report(&report_format(&r)).unwrap();
        let want = [r.per_type[0].f1, r.per_type[1].f1, r.per_type[2].f1, r.per_type[3].f1, r.overall.precision, r.overall.recall, r.overall.f1];
        for (p, w) in parsed.iter().zip(want) {
            prop_assert!((p - 100.0 * w).abs() <= 0.005 + 1e-9);
        }
    }

    #[test]
    fn tmn_and_conll_round_trip(a in example(0), b in example(1)) {
        let corpus = vec![a, b];
        let sidecar = sidecar_of(&corpus);
        let back = mner_core::seqdata::parse_tmn(serialize_tmn(&corpus).as_bytes(), Some(&sidecar), ParseMode::Strict).unwrap();
        prop_assert_eq!(&back, &corpus);
        let conll = parse_conll(serialize_conll(&corpus).as_bytes(), ParseMode::Strict).unwrap();
        prop_assert_eq!(conll.len(), 2);
        for (c, e) in conll.iter().zip(&corpus) {
            prop_assert_eq!(&c.tokens, &e.tokens);
            prop_assert_eq!(&c.tags, &e.tags);
        }
    }

    #[test]
    fn sidecar_tsv_round_trips(probs in vec(0.001f64..1.0, 1..6)) {
        let mut sc = Sidecar::new();
        let total: f64 = probs.iter().sum::<f64>() * 1.01;
        let words: Vec<ImageWord> = probs.iter().enumerate().map(|(i, &p)| ImageWord::new(format!("label_{i}"), p / total)).collect();
        sc.insert("img", words);
        let back = Sidecar::parse(sc.to_tsv().as_bytes()).unwrap();
        prop_assert_eq!(back.get("img").unwrap(), sc.get("img").unwrap());
        let got = back.get("img").unwrap();
        prop_assert!(got.windows(2).all(|w| w[0].probability >= w[1].probability));
    }

    #[test]
    fn config_text_round_trips_and_hash_ignores_insertion_order(entries in vec(("[a-z_]{1,8}", "[a-z0-9.,-]{0,6}"), 0..8)) {
        let mut a = KvConfig::new();
        let mut b = KvConfig::new();
        for (k, v) in &entries {
            a.set(k.clone(), v);
        }
        let last: BTreeMap<_, _> = entries.iter().cloned().collect();
        for (k, v) in last.iter().rev() {
            b.set(k.clone(), v);
        }
        prop_assert_eq!(KvConfig::parse(&a.to_text()).unwrap(), a.clone());
        prop_assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn viterbi_path_scores_at_least_any_path_and_at_most_log_z((em, p) in crf_problem(), seed in any::<u64>()) {
        let (best, score) = viterbi_decode(&em, &p).unwrap();
        prop_assert!((path_score(&em, &best, &p).unwrap() - score).abs() < 1e-9);
        let n = em.shape()[0];
        let other: Vec<usize> = (0..n).map(|i| ((seed >> (i * 4)) as usize) % NUM_TAGS).collect();
        prop_assert!(path_score(&em, &other, &p).unwrap() <= score + 1e-12);
        prop_assert!(log_partition(&em, &p).unwrap() >= score);
    }

    #[test]
    fn top_k_is_sorted_and_maximal(probs in vec(0.0f64..1.0, 5..200)) {
        let top = top_k_indices(&probs, 5);
        prop_assert_eq!(top.len(), 5);
        prop_assert!(top.windows(2).all(|w| probs[w[0]] >= probs[w[1]]));
        let floor = probs[top[4]];
        prop_assert_eq!(probs.iter().filter(|&&p| p > floor).count() <= 4, true);
    }

    #[test]
    fn tokenizer_covers_every_word_and_round_trips_known_ones(words in vec("[a-z]{1,12}", 1..6)) {
        let vocab = synthetic_vocab().unwrap();
        let t = vocab.tokenize_words(&words);
        prop_assert_eq!(t.num_words(), words.len());
        for (w, word) in words.iter().enumerate() {
            let pieces: Vec<usize> = t.ids[t.pieces_of(w)].to_vec();
            prop_assert!(!pieces.is_empty());
            if !pieces.contains(&vocab.unk()) {
                prop_assert_eq!(&vocab.detokenize(&pieces), word);
            }
        }
    }
}

#[test]
fn checkpoint_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut config = KvConfig::new();
    config.set("hidden", 8);
    let ckpt = Checkpoint {
        kind: ModelKind::Cwi,
        config,
        meta: BTreeMap::from([("k".to_string(), "v\nw".to_string())]),
        tensors: vec![(
            "w".into(),
            Tensor::new(vec![1, 3], vec![0.1, f64::MAX, -1e-300]).unwrap(),
        )],
    };
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    std::fs::write(&path, b"MNERCKPT").unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(
        err.to_string().contains("m.ckpt") && err.to_string().contains("truncated"),
        "{err}"
    );
}

#[test]
fn bundled_corpus_loads_without_a_sidecar() {
    let dir = mner_core::data::synthetic_dir();
    let corpus = load_tmn(&dir.join("train.txt"), None, ParseMode::Strict).unwrap();
    assert_eq!(corpus.len(), 20);
    assert!(corpus.iter().all(|e| e.image_words.is_empty()));
}
