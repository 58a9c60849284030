use mner_core::autodiff::Graph;
use mner_core::data::{synthetic_corpus, synthetic_vocab};
use mner_core::gradcheck::{check_inputs, check_owned_params, GradCheckOptions};
use mner_core::model::{ModelKind, SequenceTagger};
use mner_core::msb::{assemble_input, scaled_dot_product_attention, MsbConfig, MsbInput, MsbModel, SubwordVocab};
use mner_core::seqdata::{Example, ImageWord, Tag, TagScheme};
use mner_core::tensor::Tensor;
use mner_core::train::{evaluate_model, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn tiny_vocab() -> SubwordVocab {
    let words = [
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "rt", "@", "bob", "##s", "paris", "dog", "tree", "a", "##b",
    ];
    SubwordVocab::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn miniature(use_crf: bool) -> MsbModel {
    let vocab = tiny_vocab();
    let config = MsbConfig {
        use_crf,
        ..MsbConfig::miniature(vocab.len())
    };
    MsbModel::new(config, vocab, 5).unwrap()
}

fn example(tokens: &[&str], tags: &[&str], images: &[(&str, f64)]) -> Example {
    let mut e = Example::new(
        "t",
        tokens.iter().map(|s| s.to_string()).collect(),
        tags.iter().map(|t| Tag::parse(t).unwrap()).collect(),
    );
    e.image_words = images.iter().map(|(l, p)| ImageWord::new(*l, *p)).collect();
    e
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn hidden_states(model: &MsbModel, input: &MsbInput) -> Tensor {
    let mut g = Graph::inference();
    let out = model.forward(&mut g, input).unwrap();
    g.value(out.hidden).clone()
}

#[test]
fn every_vocabulary_entry_round_trips() {
    let vocab = synthetic_vocab().unwrap();
    assert_eq!(vocab.len(), 1000);
    for (id, word) in vocab.tokens().iter().enumerate() {
        let pieces = vocab.tokenize_word(word);
        if id != vocab.unk() {
            assert!(!pieces.contains(&vocab.unk()), "{word} fell back to [UNK]");
        }
        assert_eq!(vocab.detokenize(&pieces), *word);
    }
}

#[test]
fn image_labels_follow_the_first_separator() {
    let vocab = synthetic_vocab().unwrap();
    for ex in synthetic_corpus().unwrap() {
        let text = vocab.tokenize_words(&ex.tokens);
        let input = assemble_input(&vocab, &text, &ex.image_words, 512).unwrap();
        assert_eq!(input.ids.len(), input.segments.len());
        assert_eq!(input.ids.len(), input.mask.len());
        let sep = input.ids.iter().position(|&i| i == vocab.sep()).unwrap();
        assert_eq!(sep, text.len() + 1);
        let decoded = vocab.detokenize(&input.ids[sep + 1..input.ids.len() - 1]);
        let expected: Vec<String> = ex.image_words.iter().map(|w| w.label.replace('_', " ")).collect();
        assert_eq!(decoded, expected.join(" "));
        assert!(input.segments[..=sep].iter().all(|&s| s == 0));
        assert!(input.segments[sep + 1..].iter().all(|&s| s == 1));
        assert_eq!(input.word_positions.len(), ex.len());
    }
}

#[test]
fn single_key_attention_returns_its_value() {
    let mut g = Graph::inference();
    let q = g.constant(Tensor::matrix(3, 2, vec![0.3, -1.0, 2.0, 0.5, -0.7, 0.1]).unwrap());
    let k = g.constant(Tensor::matrix(1, 2, vec![0.9, 0.4]).unwrap());
    let v = g.constant(Tensor::matrix(1, 3, vec![1.5, -2.0, 0.25]).unwrap());
    let a = scaled_dot_product_attention(&mut g, q, k, v, &[true]).unwrap();
    for r in 0..3 {
        assert_eq!(g.value(a.output).row_slice(r), &[1.5, -2.0, 0.25]);
    }
}

#[test]
fn orthogonal_query_averages_values() {
    let mut g = Graph::inference();
    let q = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let k = g.constant(Tensor::matrix(3, 2, vec![0.0, 1.0, 0.0, -2.0, 0.0, 5.0]).unwrap());
    let v = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
    let a = scaled_dot_product_attention(&mut g, q, k, v, &[true; 3]).unwrap();
    let out = g.value(a.output).data();
    assert!((out[0] - 3.0).abs() < 1e-15 && (out[1] - 5.0).abs() < 1e-15);
}

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// Dot product with exact products (fused multiply-add error terms).
fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).flat_map(|(x, y)| {
        let p = x * y;
        [p, x.mul_add(*y, -p)]
    }))
}

#[test]
fn attention_weights_match_compensated_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let (m, n, d) = (rng.random_range(1..6), rng.random_range(1..8), rng.random_range(1..6));
        let q = Tensor::uniform(vec![m, d], -3.0, 3.0, &mut rng);
        let k = Tensor::uniform(vec![n, d], -3.0, 3.0, &mut rng);
        let v = Tensor::uniform(vec![n, 2], -1.0, 1.0, &mut rng);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        mask[rng.random_range(0..n)] = true;
        let mut g = Graph::inference();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let a = scaled_dot_product_attention(&mut g, qv, kv, vv, &mask).unwrap();
        let w = g.value(a.weights);
        for r in 0..m {
            let scores: Vec<f64> = (0..n)
                .map(|j| compensated_dot(q.row_slice(r), k.row_slice(j)) / (d as f64).sqrt())
                .collect();
            let max = (0..n)
                .filter(|&j| mask[j])
                .map(|j| scores[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = (0..n)
                .map(|j| if mask[j] { (scores[j] - max).exp() } else { 0.0 })
                .collect();
            let z = compensated_sum(exps.iter().copied());
            for j in 0..n {
                assert!((w.at(r, j) - exps[j] / z).abs() < 1e-6, "trial {trial}");
                if !mask[j] {
                    assert!(w.at(r, j) < 1e-6);
                }
            }
            let total: f64 = (0..n).filter(|&j| mask[j]).map(|j| w.at(r, j)).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn masked_attention_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let inputs = [
            Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng),
            Tensor::uniform(vec![5, 4], -1.0, 1.0, &mut rng),
            Tensor::uniform(vec![5, 3], -1.0, 1.0, &mut rng),
        ];
        let mask = [true, false, true, true, false];
        let probe = Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut rng);
        let report = check_inputs(&inputs, GradCheckOptions::default(), |g, v| {
            let a = scaled_dot_product_attention(g, v[0], v[1], v[2], &mask)?;
            let p = g.mul_const(a.output, &probe)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(report.passes(TOL), "seed {seed}: {}", report.max_relative_error());
    }
}

#[test]
fn encoder_ignores_masked_padding() {
    let model = miniature(false);
    let vocab = model.vocab();
    let text = vocab.tokenize("rt @ bobs paris");
    let input = assemble_input(vocab, &text, &[ImageWord::new("dog", 0.8)], 24).unwrap();
    let mut padded = input.clone();
    padded.pad_to(input.len() + 5, vocab.pad());
    let a = hidden_states(&model, &input);
    let b = hidden_states(&model, &padded);
    for r in 0..input.len() {
        for (x, y) in a.row_slice(r).iter().zip(b.row_slice(r)) {
            assert!((x - y).abs() <= 1e-8);
        }
    }
}

#[test]
fn swapping_two_tokens_changes_the_encoding() {
    let model = miniature(false);
    let vocab = model.vocab();
    let one = assemble_input(vocab, &vocab.tokenize("paris dog"), &[], 24).unwrap();
    let two = assemble_input(vocab, &vocab.tokenize("dog paris"), &[], 24).unwrap();
    let (a, b) = (hidden_states(&model, &one), hidden_states(&model, &two));
    // same multiset of rows would mean positions were ignored
    assert!(
        (a.row_slice(1)
            .iter()
            .zip(b.row_slice(2))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
            > 1e-6
    );
}

#[test]
fn inputs_beyond_the_position_table_are_rejected() {
    let model = miniature(false);
    let vocab = model.vocab();
    let text = vocab.tokenize(&"a ".repeat(30));
    let mut input = assemble_input(vocab, &text, &[], 64).unwrap();
    assert!(model.forward(&mut Graph::inference(), &input).is_err());
    input.ids.truncate(10);
    input.segments.truncate(10);
    input.mask.truncate(10);
    input.word_positions.retain(|&p| p < 10);
    assert!(model.forward(&mut Graph::inference(), &input).is_ok());
}

#[test]
fn tiny_and_small_share_one_code_path() {
    let vocab = synthetic_vocab().unwrap();
    for (config, hidden, kind) in [
        (MsbConfig::tiny(), 128, ModelKind::MsbTiny),
        (MsbConfig::small(), 512, ModelKind::MsbSmall),
    ] {
        let config = MsbConfig {
            vocab_size: vocab.len(),
            ..config
        };
        let model = MsbModel::new(config.clone(), vocab.clone(), 0).unwrap();
        assert_eq!(model.kind(), kind);
        assert_eq!(model.params().inventory(), config.parameter_shapes());
        let input = assemble_input(&vocab, &vocab.tokenize("rt paris"), &[ImageWord::new("dog", 0.4)], 512).unwrap();
        assert_eq!(hidden_states(&model, &input).shape(), [input.len(), hidden]);
    }
    let with_crf = MsbConfig {
        use_crf: true,
        vocab_size: vocab.len(),
        ..MsbConfig::tiny()
    };
    let model = MsbModel::new(with_crf.clone(), vocab, 0).unwrap();
    assert_eq!(model.params().inventory(), with_crf.parameter_shapes());
}

#[test]
fn released_vocabulary_size_is_enforced() {
    assert!(MsbModel::new(MsbConfig::tiny(), tiny_vocab(), 0).is_err());
}

fn gradcheck_miniature(use_crf: bool) {
    let mut model = miniature(use_crf);
    let ex = example(
        &["RT", "Bobs", "ab", "paris"],
        &["O", "B-PER", "I-PER", "B-LOC"],
        &[("dog", 0.6), ("tree", 0.2)],
    );
    let ids: Vec<_> = model.params().ids().collect();
    let report = check_owned_params(
        &mut model,
        |m| m.params_mut(),
        &ids,
        12,
        3,
        GradCheckOptions::default(),
        |g, m: &MsbModel| m.loss(g, &ex, &mut rng()),
    )
    .unwrap();
    assert!(report.passes(TOL), "max relative error {}", report.max_relative_error());
}

#[test]
fn miniature_stack_gradients_match_finite_differences() {
    gradcheck_miniature(false);
}

#[test]
fn miniature_crf_stack_gradients_match_finite_differences() {
    gradcheck_miniature(true);
}

#[test]
fn one_tag_per_word_even_across_windows() {
    let model = miniature(false);
    let words: Vec<&str> = "rt bobs paris ab dog".split(' ').cycle().take(37).collect();
    let tags = vec!["O"; words.len()];
    let ex = example(&words, &tags, &[("tree", 0.3)]);
    assert_eq!(model.predict(&ex).unwrap().len(), 37);
    let text = model.vocab().tokenize_words(&ex.tokens);
    assert!(model.windows(&text, &ex.image_words).unwrap().len() > 1);
    assert!(model.loss(&mut Graph::new(), &ex, &mut rng()).is_ok());
}

#[test]
fn masked_crf_decoding_never_emits_illegal_sequences() {
    let vocab = tiny_vocab();
    let config = MsbConfig {
        use_crf: true,
        mask_illegal: true,
        ..MsbConfig::miniature(vocab.len())
    };
    let words = ["rt", "@", "bobs", "paris", "dog", "tree", "ab", "zzz"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..30 {
        let mut model = MsbModel::new(config.clone(), vocab.clone(), seed).unwrap();
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            for v in model.params_mut().value_mut(id).data_mut() {
                *v += rng.random_range(-2.0..2.0);
            }
        }
        let n = rng.random_range(1..10);
        let tokens: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
        let ex = example(&tokens, &vec!["O"; n], &[]);
        let tags = model.predict(&ex).unwrap();
        assert_eq!(tags.len(), n);
        assert!(TagScheme::check_sequence(&tags).is_ok(), "{tags:?}");
    }
}

#[test]
fn tiny_overfits_the_synthetic_corpus() {
    let corpus = synthetic_corpus().unwrap();
    let vocab = synthetic_vocab().unwrap();
    let config = MsbConfig {
        vocab_size: vocab.len(),
        ..MsbConfig::tiny()
    };
    let mut model = MsbModel::new(config, vocab, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 1e-3,
        stop_at_train_f1: Some(1.0),
        ..TrainConfig::default()
    };
    let logs = train(&mut model, &corpus, None, &cfg, |_| {}).unwrap();
    let f1 = evaluate_model(&model, &corpus).unwrap().overall.f1;
    assert!(f1 >= 0.95, "train F1 {f1} after {} epochs", logs.len());
}
