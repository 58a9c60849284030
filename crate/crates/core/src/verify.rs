//! Self-verification: every numerical component checked against an
//! independent oracle (finite differences, brute-force enumeration, full
//! sorts, compensated recomputation).
//!
//! `mner verify` runs [`run_all`]; the acceptance suite calls the checks
//! individually.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{sine_relu as sine_relu_value, Graph, Padding, ParamStore, Var};
use crate::crf::{crf_log_likelihood, log_partition, viterbi_decode, CrfParams};
use crate::cwi::{ClassVocab, CwiConfig, CwiModel, ImageInput};
use crate::error::Result;
use crate::gradcheck::{check_inputs, check_owned_params, check_params, GradCheckOptions, GradCheckReport};
use crate::layers::{BiLstm, Lstm, ModalityAttention, GROUP_NORM_EPS};
use crate::metrics::evaluate;
use crate::model::SequenceTagger;
use crate::msb::{assemble_input, scaled_dot_product_attention, MsbConfig, MsbModel, SubwordVocab};
use crate::seqdata::{top_k_indices, EmbeddingTable, EntityType, Example, ImageWord, Tag, NUM_TAGS};
use crate::tensor::Tensor;

/// Gradient-check tolerance on the relative error.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// SineRelu ε.
pub const SINE_RELU_EPSILON: f64 = 0.0025;

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Random instances per gradient check.
    pub seeds: u64,
    /// Negative control: flip one analytic gradient entry in every check.
    pub corrupt_gradients: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seeds: 20,
            corrupt_gradients: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// `Σ out ⊙ r` for a fixed random `r`.
fn probe(g: &mut Graph<'_>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = Tensor::uniform(g.shape(out).to_vec(), -1.0, 1.0, &mut rng);
    let weighted = g.mul_const(out, &r)?;
    Ok(g.sum(weighted))
}

fn merge(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    GradCheckReport {
        relative_errors: a.relative_errors.into_iter().chain(b.relative_errors).collect(),
        entries_checked: a.entries_checked + b.entries_checked,
    }
}

/// Uniform in ±`r`, kept at least `gap` away from zero.
fn away_from_zero(shape: Vec<usize>, r: f64, gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::uniform(shape, -r, r, rng);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap - v.abs() } else { gap + v.abs() };
        }
    }
    t
}

fn one_gradient_case(component: &str, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match component {
        "conv1d" => {
            let len = rng.random_range(3..8);
            let (cin, cout, ks) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let padding = if seed.is_multiple_of(2) {
                Padding::Same
            } else {
                Padding::Valid
            };
            let inputs = [
                Tensor::uniform(vec![len, cin], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![ks, cin, cout], -1.0, 1.0, &mut rng),
            ];
            check_inputs(&inputs, opts, |g, v| {
                let y = g.conv1d(v[0], v[1], padding)?;
                probe(g, y, seed)
            })
        }
        "maxpool1d" => {
            // distinct values spaced well beyond the step keep the argmax fixed
            let (len, ch, pool) = (rng.random_range(2..9), rng.random_range(1..4), rng.random_range(1..4));
            let mut values: Vec<f64> = (0..len * ch)
                .map(|i| i as f64 * 0.1 + rng.random_range(0.0..0.05))
                .collect();
            for i in (1..values.len()).rev() {
                values.swap(i, rng.random_range(0..=i));
            }
            check_inputs(&[Tensor::new(vec![len, ch], values)?], opts, |g, v| {
                let y = g.maxpool1d(v[0], pool)?;
                probe(g, y, seed)
            })
        }
        "lstm step" => {
            let (inp, hid) = (rng.random_range(1..4), rng.random_range(1..4));
            let mut store = ParamStore::new();
            let lstm = Lstm::new(&mut store, "lstm", inp, hid, &mut rng)?;
            let ids: Vec<_> = store.ids().collect();
            for &id in &ids {
                let shape = store.value(id).shape().to_vec();
                *store.value_mut(id) = Tensor::uniform(shape, -0.8, 0.8, &mut rng);
            }
            let inputs = [
                Tensor::uniform(vec![1, inp], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![1, hid], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![1, hid], -1.0, 1.0, &mut rng),
            ];
            let by_inputs = check_inputs(&inputs, opts, |g, v| {
                let (h, c) = lstm.step(g, &store, v[0], v[1], v[2])?;
                let both = g.concat(&[h, c], 1)?;
                probe(g, both, seed)
            })?;
            let consts = inputs.clone();
            let by_params = check_params(&mut store, &ids, 64, seed, opts, |g, s| {
                let x = g.constant(consts[0].clone());
                let h = g.constant(consts[1].clone());
                let c = g.constant(consts[2].clone());
                let (h, c) = lstm.step(g, s, x, h, c)?;
                let both = g.concat(&[h, c], 1)?;
                probe(g, both, seed)
            })?;
            Ok(merge(by_inputs, by_params))
        }
        "bilstm" => {
            let (n, inp, hid) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..4));
            let mut store = ParamStore::new();
            let bi = BiLstm::new(&mut store, "bi", inp, hid, &mut rng)?;
            let ids: Vec<_> = store.ids().collect();
            let x = Tensor::uniform(vec![n, inp], -1.0, 1.0, &mut rng);
            let by_inputs = check_inputs(std::slice::from_ref(&x), opts, |g, v| {
                let y = bi.run(g, &store, v[0])?;
                probe(g, y, seed)
            })?;
            let by_params = check_params(&mut store, &ids, 64, seed, opts, |g, s| {
                let xv = g.constant(x.clone());
                let y = bi.run(g, s, xv)?;
                probe(g, y, seed)
            })?;
            Ok(merge(by_inputs, by_params))
        }
        "sine relu" => {
            let x = away_from_zero(vec![3, 4], 4.0, 1e-3, &mut rng);
            check_inputs(&[x], opts, |g, v| {
                let y = g.sine_relu(v[0], SINE_RELU_EPSILON);
                probe(g, y, seed)
            })
        }
        "group norm" => {
            let groups = rng.random_range(1..4);
            let c = groups * rng.random_range(1..4);
            let len = rng.random_range(1..5);
            let inputs = [
                Tensor::uniform(vec![len, c], -2.0, 2.0, &mut rng),
                Tensor::uniform(vec![1, c], 0.5, 1.5, &mut rng),
                Tensor::uniform(vec![1, c], -0.5, 0.5, &mut rng),
            ];
            check_inputs(&inputs, opts, |g, v| {
                let y = g.group_norm(v[0], v[1], v[2], groups, GROUP_NORM_EPS)?;
                probe(g, y, seed)
            })
        }
        "modality attention" => {
            let (n, d, m) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(2..4));
            let mut store = ParamStore::new();
            let att = ModalityAttention::new(&mut store, "att", d, &mut rng)?;
            let ids: Vec<_> = store.ids().collect();
            let b = store.value(att.b).shape().to_vec();
            *store.value_mut(att.b) = Tensor::uniform(b, -0.5, 0.5, &mut rng);
            let inputs: Vec<Tensor> = (0..m)
                .map(|_| Tensor::uniform(vec![n, d], -1.0, 1.0, &mut rng))
                .collect();
            let by_inputs = check_inputs(&inputs, opts, |g, v| {
                let out = att.forward(g, &store, v)?;
                probe(g, out.fused, seed)
            })?;
            let by_params = check_params(&mut store, &ids, 64, seed, opts, |g, s| {
                let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
                let out = att.forward(g, s, &vars)?;
                probe(g, out.fused, seed)
            })?;
            Ok(merge(by_inputs, by_params))
        }
        "scaled dot-product attention" => {
            let (m, n, d, dv) = (
                rng.random_range(1..4),
                rng.random_range(1..5),
                rng.random_range(1..4),
                rng.random_range(1..4),
            );
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
            mask[0] = true;
            let inputs = [
                Tensor::uniform(vec![m, d], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![n, d], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![n, dv], -1.0, 1.0, &mut rng),
            ];
            check_inputs(&inputs, opts, |g, v| {
                let a = scaled_dot_product_attention(g, v[0], v[1], v[2], &mask)?;
                probe(g, a.output, seed)
            })
        }
        "crf log-likelihood" => {
            let (n, k) = (rng.random_range(1..6), NUM_TAGS);
            let tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let inputs = [
                Tensor::uniform(vec![n, k], -2.0, 2.0, &mut rng),
                Tensor::uniform(vec![k, k], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![1, k], -1.0, 1.0, &mut rng),
                Tensor::uniform(vec![1, k], -1.0, 1.0, &mut rng),
            ];
            check_inputs(&inputs, opts, |g, v| {
                crf_log_likelihood(g, v[0], v[1], v[2], v[3], &tags)
            })
        }
        "miniature cwi stack" => {
            let mut model = miniature_cwi(seed % 2 == 1, seed)?;
            let ex = random_example(
                &mut rng,
                model.cwi_config().max_words,
                &["ab", "Cd", "e", "fg"],
                &["dog", "cat", "tree"],
            );
            let tags: Vec<usize> = ex.tags.iter().map(|t| t.index()).collect();
            let ids: Vec<_> = model.params().ids().collect();
            check_owned_params(
                &mut model,
                |m| m.params_mut(),
                &ids,
                6,
                seed,
                opts,
                |g, m: &CwiModel| {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = m.forward(g, &ex.tokens, &ex.image_words, ImageInput::Full, false, &mut rng)?;
                    m.crf().loss(g, m.params(), out.emissions, &tags)
                },
            )
        }
        "miniature msb stack" => {
            let mut model = miniature_msb(seed % 2 == 1, seed)?;
            let ex = random_example(&mut rng, 4, &["rt", "bobs", "ab", "paris", "zz"], &["dog", "tree"]);
            let ids: Vec<_> = model.params().ids().collect();
            check_owned_params(
                &mut model,
                |m| m.params_mut(),
                &ids,
                6,
                seed,
                opts,
                |g, m: &MsbModel| m.loss(g, &ex, &mut ChaCha8Rng::seed_from_u64(0)),
            )
        }
        other => unreachable!("unknown component {other}"),
    }
}

/// Components covered by [`gradient_checks`].
pub const GRADIENT_COMPONENTS: [&str; 11] = [
    "conv1d",
    "maxpool1d",
    "lstm step",
    "bilstm",
    "sine relu",
    "group norm",
    "modality attention",
    "scaled dot-product attention",
    "crf log-likelihood",
    "miniature cwi stack",
    "miniature msb stack",
];

fn random_example(rng: &mut ChaCha8Rng, max_words: usize, words: &[&str], labels: &[&str]) -> Example {
    let n = rng.random_range(2..=max_words);
    let tokens: Vec<String> = (0..n)
        .map(|_| words[rng.random_range(0..words.len())].to_string())
        .collect();
    let tags: Vec<Tag> = (0..n)
        .map(|_| Tag::from_index(rng.random_range(0..NUM_TAGS)).expect("valid index"))
        .collect();
    let mut ex = Example::new("verify", tokens, tags);
    ex.image_words = labels
        .iter()
        .take(rng.random_range(0..=labels.len()))
        .map(|l| ImageWord::new(*l, rng.random_range(0.05..0.3)))
        .collect();
    ex
}

/// The smallest CWI network that still exercises every layer.
pub fn miniature_cwi(use_attention: bool, seed: u64) -> Result<CwiModel> {
    let config = CwiConfig {
        use_attention,
        ..CwiConfig::miniature()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glove = EmbeddingTable::new(config.glove_dim, seed);
    let mut fasttext = EmbeddingTable::new(config.fasttext_dim, seed);
    for w in ["ab", "e"] {
        glove.insert(w, (0..config.glove_dim).map(|_| rng.random_range(-0.5..0.5)).collect())?;
        fasttext.insert(
            w,
            (0..config.fasttext_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
        )?;
    }
    let classes = ClassVocab::from_labels(["dog", "tree"], config.image_classes)?;
    CwiModel::new(config, glove, fasttext, classes, seed)
}

/// A two-layer, width-16, two-head MSB over a 14-entry vocabulary.
pub fn miniature_msb(use_crf: bool, seed: u64) -> Result<MsbModel> {
    let words = [
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "rt", "@", "bob", "##s", "paris", "dog", "tree", "a", "##b",
    ];
    let vocab = SubwordVocab::new(words.iter().map(|s| s.to_string()).collect())?;
    let config = MsbConfig {
        use_crf,
        ..MsbConfig::miniature(vocab.len())
    };
    MsbModel::new(config, vocab, seed)
}

/// One result per component, each over `opts.seeds` random instances.
pub fn gradient_checks(opts: VerifyOptions) -> Vec<CheckResult> {
    let gc = GradCheckOptions {
        corrupt: opts.corrupt_gradients,
        ..GradCheckOptions::default()
    };
    GRADIENT_COMPONENTS
        .iter()
        .map(|&component| {
            timed(&format!("gradient: {component}"), || {
                let mut worst: f64 = 0.0;
                let mut entries = 0;
                for seed in 0..opts.seeds {
                    let r = one_gradient_case(component, seed, gc)?;
                    worst = worst.max(r.max_relative_error());
                    entries += r.entries_checked;
                }
                Ok((
                    worst < GRADIENT_TOLERANCE,
                    format!("{} seeds, {entries} entries, max rel. error {worst:.2e}", opts.seeds),
                ))
            })
        })
        .collect()
}

/// Path score written directly from the definition.
fn path_score_by_definition(em: &Tensor, p: &CrfParams, path: &[usize]) -> f64 {
    let k = p.start.len();
    let mut s = p.start.data()[path[0]] + p.stop.data()[path[path.len() - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += em.data()[t * k + y];
        if t > 0 {
            s += p.transitions.data()[path[t - 1] * k + y];
        }
    }
    s
}

/// `log Z` and the best path by enumerating all `kⁿ` paths. Paths are
/// visited with the first position varying fastest, so the first strict
/// maximum matches lowest-index backpointer tie-breaking.
pub fn brute_force_crf(em: &Tensor, p: &CrfParams) -> Result<(f64, Vec<usize>)> {
    let (n, k) = em.dims2()?;
    let total = k.pow(n as u32);
    let mut scores = Vec::with_capacity(total);
    let mut best = (f64::NEG_INFINITY, 0);
    let mut path = vec![0; n];
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % k;
            c /= k;
        }
        let s = path_score_by_definition(em, p, &path);
        if s > best.0 {
            best = (s, code);
        }
        scores.push(s);
    }
    let max = best.0;
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let mut c = best.1;
    let best_path = (0..n)
        .map(|_| {
            let y = c % k;
            c /= k;
            y
        })
        .collect();
    Ok((log_z, best_path))
}

/// Forward algorithm and Viterbi against enumeration on `instances` random
/// nine-tag problems of length 1 to 6.
pub fn crf_exactness(instances: usize, seed: u64) -> CheckResult {
    timed("crf: log Z and Viterbi vs enumeration", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut path_mismatches = 0;
        for i in 0..instances {
            let n = 1 + i % 6;
            let k = NUM_TAGS;
            let p = CrfParams {
                transitions: Tensor::uniform(vec![k, k], -2.0, 2.0, &mut rng),
                start: Tensor::uniform(vec![1, k], -2.0, 2.0, &mut rng),
                stop: Tensor::uniform(vec![1, k], -2.0, 2.0, &mut rng),
            };
            let em = Tensor::uniform(vec![n, k], -3.0, 3.0, &mut rng);
            let (log_z, path) = brute_force_crf(&em, &p)?;
            worst = worst.max((log_partition(&em, &p)? - log_z).abs());
            if viterbi_decode(&em, &p)?.0 != path {
                path_mismatches += 1;
            }
        }
        Ok((
            worst < 1e-8 && path_mismatches == 0,
            format!("{instances} instances, max |Δ log Z| {worst:.1e}, {path_mismatches} path mismatches"),
        ))
    })
}

/// Span set of a tag sequence by testing every `(start, end, type)`: a span
/// exists when it opens at `start` (B-X, or I-X not continuing X), every
/// later position up to `end` is I-X, and position `end + 1` is not I-X.
pub fn brute_force_spans(tags: &[Tag]) -> HashSet<(usize, usize, EntityType)> {
    let mut out = HashSet::new();
    let n = tags.len();
    for kind in EntityType::ALL {
        let continues = |i: usize| tags[i] == Tag::I(kind);
        for s in 0..n {
            let opens = match tags[s] {
                Tag::B(k) => k == kind,
                Tag::I(k) => k == kind && (s == 0 || !matches!(tags[s - 1], Tag::B(p) | Tag::I(p) if p == kind)),
                Tag::O => false,
            };
            if !opens {
                continue;
            }
            for e in s..n {
                if (s + 1..=e).all(continues) && (e + 1 == n || !continues(e + 1)) {
                    out.insert((s, e, kind));
                }
            }
        }
    }
    out
}

/// [`evaluate`] counts against [`brute_force_spans`] set arithmetic on
/// random corpora (illegal `I-X` included), plus the fixed hand example.
pub fn metric_oracle(corpora: usize, seed: u64) -> CheckResult {
    timed("metrics: span counts vs brute-force scorer", || {
        let hand = evaluate(&[tags_of("B-PER I-PER O")], &[tags_of("B-PER O O")])?;
        let hand_ok = hand.overall.precision == 0.0 && hand.overall.recall == 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mismatches = 0;
        for _ in 0..corpora {
            let sentences = rng.random_range(1..6);
            let mut gold = Vec::new();
            let mut pred = Vec::new();
            for _ in 0..sentences {
                let n = rng.random_range(1..10);
                let mut draw = || -> Vec<Tag> {
                    (0..n)
                        .map(|_| Tag::from_index(rng.random_range(0..NUM_TAGS)).expect("valid index"))
                        .collect()
                };
                gold.push(draw());
                pred.push(draw());
            }
            let report = evaluate(&gold, &pred)?;
            for (t, kind) in EntityType::ALL.iter().enumerate() {
                let (mut tp, mut np, mut ng) = (0, 0, 0);
                for (g, p) in gold.iter().zip(&pred) {
                    let gs: HashSet<_> = brute_force_spans(g).into_iter().filter(|s| s.2 == *kind).collect();
                    let ps: HashSet<_> = brute_force_spans(p).into_iter().filter(|s| s.2 == *kind).collect();
                    tp += gs.intersection(&ps).count();
                    np += ps.len();
                    ng += gs.len();
                }
                let c = report.per_type[t].counts;
                if (c.true_positives, c.predicted, c.gold) != (tp, np, ng) {
                    mismatches += 1;
                }
            }
        }
        Ok((
            hand_ok && mismatches == 0,
            format!("{corpora} corpora, {mismatches} count mismatches, hand example P=R=0: {hand_ok}"),
        ))
    })
}

fn tags_of(s: &str) -> Vec<Tag> {
    s.split_whitespace()
        .map(|t| Tag::parse(t).expect("literal tag"))
        .collect()
}

/// f(1) = 1, f(0) = −ε, and the negative-branch derivative ε(cos x + sin x)
/// against central differences.
pub fn sine_relu_values() -> CheckResult {
    timed("sine relu: analytic values", || {
        let eps = SINE_RELU_EPSILON;
        let one = sine_relu_value(1.0, eps) == 1.0;
        let zero = sine_relu_value(0.0, eps) == -eps;
        let mut worst: f64 = 0.0;
        for i in 1..=200 {
            let x = -(i as f64) * 0.05;
            let h = 1e-6;
            let numeric = (sine_relu_value(x + h, eps) - sine_relu_value(x - h, eps)) / (2.0 * h);
            let analytic = eps * (x.cos() + x.sin());
            let mut g = Graph::new();
            let v = g.leaf(Tensor::scalar(x));
            let y = g.sine_relu(v, eps);
            g.backward(y)?;
            let tape = g.grad(v).map(|t| t.item()).unwrap_or(f64::NAN);
            worst = worst.max((numeric - analytic).abs()).max((tape - analytic).abs());
        }
        Ok((
            one && zero && worst < 1e-6,
            format!("f(1)=1: {one}, f(0)=-eps: {zero}, max derivative error {worst:.1e}"),
        ))
    })
}

/// Top-5 selection against a full sort over random 1000-class
/// distributions.
pub fn top5_oracle(trials: usize, seed: u64) -> CheckResult {
    timed("image words: top-5 vs full sort", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mismatches = 0;
        for t in 0..trials {
            let mut probs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
            if t % 10 == 0 {
                // coarse values force ties
                probs.iter_mut().for_each(|p| *p = (*p * 20.0).floor());
            }
            let z: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= z);
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).expect("finite").then(a.cmp(&b)));
            let expected: HashSet<usize> = order[..5].iter().copied().collect();
            let got: HashSet<usize> = top_k_indices(&probs, 5).into_iter().collect();
            if got != expected {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{trials} trials, {mismatches} mismatches")))
    })
}

/// Modality-attention α and every encoder attention row sum to one over
/// unmasked positions; masked positions get (almost) nothing.
pub fn attention_normalization(inputs: usize, seed: u64) -> CheckResult {
    timed("attention: rows sum to one, masked weights vanish", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let att = ModalityAttention::new(&mut store, "att", 6, &mut rng)?;
        let msb = miniature_msb(false, seed)?;
        let vocab = msb.vocab();
        let words = ["rt", "@", "bobs", "paris", "dog", "tree", "ab", "zz"];
        let (mut worst_sum, mut worst_masked): (f64, f64) = (0.0, 0.0);
        for _ in 0..inputs {
            let n = rng.random_range(1..6);
            let mut g = Graph::inference();
            let mods: Vec<Var> = (0..3)
                .map(|_| g.constant(Tensor::uniform(vec![n, 6], -4.0, 4.0, &mut rng)))
                .collect();
            let out = att.forward(&mut g, &store, &mods)?;
            let w = g.value(out.weights);
            for r in 0..n {
                worst_sum = worst_sum.max((w.row_slice(r).iter().sum::<f64>() - 1.0).abs());
            }

            let count = rng.random_range(1..6);
            let text: Vec<&str> = (0..count).map(|_| words[rng.random_range(0..words.len())]).collect();
            let mut input = assemble_input(vocab, &vocab.tokenize_words(&text), &[ImageWord::new("dog", 0.4)], 24)?;
            let real = input.len();
            input.pad_to(real + rng.random_range(0..4), vocab.pad());
            let mut g = Graph::inference();
            let out = msb.forward(&mut g, &input)?;
            for w in out.attention.iter().flatten() {
                let w = g.value(*w);
                for r in 0..w.rows() {
                    let row = w.row_slice(r);
                    worst_sum = worst_sum.max((row[..real].iter().sum::<f64>() - 1.0).abs());
                    worst_masked = row[real..].iter().copied().fold(worst_masked, f64::max);
                }
            }
        }
        Ok((
            worst_sum < 1e-6 && worst_masked < 1e-6,
            format!("{inputs} inputs, max |Σα − 1| {worst_sum:.1e}, max masked weight {worst_masked:.1e}"),
        ))
    })
}

/// Every vocabulary entry tokenizes without `[UNK]` and detokenizes to
/// itself.
pub fn tokenizer_round_trip(vocab: &SubwordVocab) -> CheckResult {
    timed("tokenizer: vocabulary round trip", || {
        let mut failures = Vec::new();
        for (id, word) in vocab.tokens().iter().enumerate() {
            let pieces = vocab.tokenize_word(word);
            let unk = id != vocab.unk() && pieces.contains(&vocab.unk());
            if unk || vocab.detokenize(&pieces) != *word {
                failures.push(word.clone());
            }
        }
        let sample: Vec<&str> = failures.iter().take(3).map(String::as_str).collect();
        Ok((
            failures.is_empty(),
            format!("{} entries, {} failures {sample:?}", vocab.len(), failures.len()),
        ))
    })
}

/// The whole suite.
pub fn run_all(opts: VerifyOptions, vocab: &SubwordVocab) -> Vec<CheckResult> {
    let mut results = gradient_checks(opts);
    results.push(crf_exactness(200, 1));
    results.push(metric_oracle(500, 2));
    results.push(sine_relu_values());
    results.push(top5_oracle(1000, 3));
    results.push(attention_normalization(100, 4));
    results.push(tokenizer_round_trip(vocab));
    results
}

/// One line per check: status, name, seconds, detail.
pub fn format_results(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{status}  {:<width$}  {:>6.2}s  {}",
            r.name,
            r.elapsed.as_secs_f64(),
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(out, "{} checks, {failed} failed", results.len());
    out
}
