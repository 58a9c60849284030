//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Criterion 11 reads the Twitter multimodal NER corpus from
//! `$MNER_DATA_ROOT/tmn/{train,dev,test}.txt` and is skipped when those
//! files are absent.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mner_core::config::KvConfig;
use mner_core::cwi::CwiModel;
use mner_core::data::{load_tmn, synthetic_corpus, synthetic_vocab};
use mner_core::metrics::report_kv;
use mner_core::model::{ModelKind, SequenceTagger};
use mner_core::msb::{MsbInput, MsbModel};
use mner_core::pipeline::{build, Resources, Tagger};
use mner_core::seqdata::{tmn_reference, DatasetStats, ParseMode, SplitStats, TMN_PUBLISHED_TOTAL_ENTITIES};
use mner_core::train::{evaluate_model, train, TrainConfig};
use mner_core::verify::{
    attention_normalization, crf_exactness, gradient_checks, metric_oracle, sine_relu_values, tokenizer_round_trip,
    top5_oracle, CheckResult, VerifyOptions,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Criterion = (&'static str, fn() -> Outcome);

fn from_checks(results: &[CheckResult]) -> Outcome {
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect();
    if failed.is_empty() {
        Outcome::Pass(results.iter().map(|r| r.detail.as_str()).collect::<Vec<_>>().join("; "))
    } else {
        Outcome::Fail(failed.join("; "))
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let results = gradient_checks(VerifyOptions::default());
    let elapsed = start.elapsed();
    match from_checks(&results) {
        Outcome::Pass(_) if elapsed > Duration::from_secs(180) => {
            Outcome::Fail(format!("took {elapsed:?}, budget 3 min"))
        }
        Outcome::Pass(_) => {
            let each: Vec<String> = results
                .iter()
                .map(|r| {
                    format!(
                        "{} ({})",
                        r.name.trim_start_matches("gradient: "),
                        r.detail.rsplit(", ").next().unwrap_or("")
                    )
                })
                .collect();
            Outcome::Pass(format!(
                "{} components in {:.1}s: {}",
                results.len(),
                elapsed.as_secs_f64(),
                each.join(", ")
            ))
        }
        other => other,
    }
}

fn crf() -> Outcome {
    from_checks(&[crf_exactness(200, 1)])
}

fn metrics() -> Outcome {
    from_checks(&[metric_oracle(500, 2)])
}

fn sine_relu() -> Outcome {
    from_checks(&[sine_relu_values()])
}

fn synthetic_model(kind: ModelKind) -> Tagger {
    let corpus = synthetic_corpus().expect("bundled corpus");
    build(kind, &KvConfig::new(), &Resources::synthetic(), &corpus, 0).expect("model builds")
}

fn shape_of(model: &dyn SequenceTagger, name: &str) -> Vec<usize> {
    model
        .params()
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| t.shape().to_vec())
        .unwrap_or_default()
}

fn msb_fidelity(kind: ModelKind, hidden: usize, heads: usize, layers: usize) -> Vec<String> {
    let mut problems = Vec::new();
    let Tagger::Msb(model) = synthetic_model(kind) else {
        return vec![format!("{kind} did not build an MSB model")];
    };
    let c = model.msb_config();
    if (c.hidden, c.heads, c.layers) != (hidden, heads, layers) {
        problems.push(format!("{kind} config {}/{}/{}", c.hidden, c.heads, c.layers));
    }
    let vocab = model.vocab();
    let token_shape = shape_of(&model, "embeddings/token");
    if token_shape != [vocab.len(), hidden] {
        problems.push(format!("{kind} token embedding {token_shape:?}"));
    }
    let words = vec!["rt".to_string(), "paris".to_string()];
    let input =
        mner_core::msb::assemble_input(vocab, &vocab.tokenize_words(&words), &[], c.max_positions).expect("assembles");
    let out = forward(&model, &input);
    if out.0 != [input.len(), hidden] || out.1 != layers || out.2.iter().any(|&h| h != heads) {
        problems.push(format!(
            "{kind} encoder hidden {:?}, {} layers, heads per layer {:?}",
            out.0, out.1, out.2
        ));
    }
    problems
}

fn forward(model: &MsbModel, input: &MsbInput) -> (Vec<usize>, usize, Vec<usize>) {
    let mut g = mner_core::autodiff::Graph::inference();
    let out = model.forward(&mut g, input).expect("forward");
    let hidden = g.shape(out.hidden).to_vec();
    (
        hidden,
        out.attention.len(),
        out.attention.iter().map(Vec::len).collect(),
    )
}

fn cwi_fidelity() -> Vec<String> {
    let mut problems = Vec::new();
    let Tagger::Cwi(model) = synthetic_model(ModelKind::Cwi) else {
        return vec!["cwi did not build a CWI model".into()];
    };
    let model: &CwiModel = &model;
    let dims = model.dims();
    let expect = |what: &str, got: usize, want: usize, problems: &mut Vec<String>| {
        if got != want {
            problems.push(format!("{what} {got}, expected {want}"));
        }
    };
    expect("joint word embedding", dims.word_embedding, 500, &mut problems);
    expect("image embedding", dims.image_features, 50, &mut problems);
    expect("fusion BiLSTM output", dims.fusion_output, 200, &mut problems);
    expect("CRF classes", model.crf().num_tags, 9, &mut problems);
    let checks: [(&str, Vec<usize>); 5] = [
        ("word/bilstm/fwd/w", vec![500, 4 * model.cwi_config().word_lstm]),
        ("image/embedding", vec![model.cwi_config().image_classes, 50]),
        ("fusion/bilstm/fwd/u", vec![100, 400]),
        ("fusion/projection/w", vec![200, 9]),
        ("crf/transitions", vec![9, 9]),
    ];
    for (name, want) in checks {
        let got = shape_of(model, name);
        if got != want {
            problems.push(format!("{name} has shape {got:?}, expected {want:?}"));
        }
    }
    let corpus = synthetic_corpus().expect("bundled corpus");
    let (em, _) = model.padded_emissions(&corpus[0]).expect("emissions");
    if em.shape() != [35, 9] {
        problems.push(format!("emissions {:?}", em.shape()));
    }
    problems
}

fn configuration() -> Outcome {
    let mut problems = msb_fidelity(ModelKind::MsbTiny, 128, 2, 2);
    problems.extend(msb_fidelity(ModelKind::MsbSmall, 512, 8, 4));
    problems.extend(cwi_fidelity());
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "msb-tiny 128/2/2, msb-small 512/8/4, cwi word 200+300, image 50, fusion 100+100, 9 tags".into()
        } else {
            problems.join("; ")
        },
    )
}

fn overfit_one(kind: ModelKind, learning_rate: f64) -> (f64, usize, Duration) {
    let corpus = synthetic_corpus().expect("bundled corpus");
    let mut model = build(kind, &KvConfig::new(), &Resources::synthetic(), &corpus, 0).expect("model builds");
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate,
        seed: 0,
        stop_at_train_f1: Some(1.0),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let logs = train(&mut model, &corpus, None, &cfg, |_| {}).expect("training runs");
    let f1 = evaluate_model(&model, &corpus).expect("evaluates").overall.f1;
    (f1, logs.len(), start.elapsed())
}

fn overfit() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (kind, lr) in [(ModelKind::Cwi, 2e-3), (ModelKind::MsbTiny, 1e-3)] {
        let (f1, epochs, took) = overfit_one(kind, lr);
        ok &= f1 >= 0.95 && took < Duration::from_secs(240);
        parts.push(format!(
            "{kind} train F1 {f1:.3} after {epochs} epochs in {:.1}s",
            took.as_secs_f64()
        ));
    }
    verdict(ok, parts.join("; "))
}

fn attention() -> Outcome {
    from_checks(&[attention_normalization(100, 4)])
}

fn top5() -> Outcome {
    from_checks(&[top5_oracle(1000, 3)])
}

fn tokenizer() -> Outcome {
    from_checks(&[tokenizer_round_trip(&synthetic_vocab().expect("bundled vocab"))])
}

fn train_and_report(kind: ModelKind) -> (String, Vec<u64>) {
    let corpus = synthetic_corpus().expect("bundled corpus");
    let (train_set, dev_set) = corpus.split_at(15);
    let mut model = build(kind, &KvConfig::new(), &Resources::synthetic(), train_set, 7).expect("model builds");
    let cfg = TrainConfig {
        epochs: 2,
        learning_rate: 1e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let logs = train(&mut model, train_set, Some(dev_set), &cfg, |_| {}).expect("training runs");
    let report = report_kv(&evaluate_model(&model, dev_set).expect("evaluates"));
    let losses = logs
        .iter()
        .map(|l| format!("{:016x}", l.mean_loss.to_bits()))
        .collect::<Vec<_>>()
        .join(",");
    let weights = model
        .params()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect();
    (format!("{report}losses={losses}\n"), weights)
}

fn determinism() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in [ModelKind::Cwi, ModelKind::MsbTiny] {
        let (report_a, weights_a) = train_and_report(kind);
        let (report_b, weights_b) = train_and_report(kind);
        let same = report_a == report_b && weights_a == weights_b;
        ok &= same;
        parts.push(format!(
            "{kind}: reports {}, weights {}",
            if report_a == report_b { "identical" } else { "differ" },
            if weights_a == weights_b { "identical" } else { "differ" }
        ));
    }
    verdict(ok, parts.join("; "))
}

fn corpus_root() -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os("MNER_DATA_ROOT")?).join("tmn");
    ["train.txt", "dev.txt", "test.txt"]
        .iter()
        .all(|f| root.join(f).is_file())
        .then_some(root)
}

fn dataset_statistics() -> Outcome {
    let Some(root) = corpus_root() else {
        return Outcome::Skip("TMN corpus not found under $MNER_DATA_ROOT/tmn".into());
    };
    let split = |name: &str| -> Result<SplitStats, String> {
        let examples = load_tmn(&root.join(name), None, ParseMode::Lenient).map_err(|e| e.to_string())?;
        SplitStats::of(&examples).map_err(|e| e.to_string())
    };
    let stats = match (split("train.txt"), split("dev.txt"), split("test.txt")) {
        (Ok(train), Ok(dev), Ok(test)) => DatasetStats { train, dev, test },
        (a, b, c) => {
            let errors: Vec<String> = [a, b, c].into_iter().filter_map(Result::err).collect();
            return Outcome::Fail(errors.join("; "));
        }
    };
    let reference = tmn_reference();
    let sizes = (stats.train.sentences, stats.dev.sentences, stats.test.sentences);
    let want = (
        reference.train.sentences,
        reference.dev.sentences,
        reference.test.sentences,
    );
    let total = stats.total_entities();
    verdict(
        sizes == want && total == TMN_PUBLISHED_TOTAL_ENTITIES,
        format!(
            "split {sizes:?} (expected {want:?}), {total} entities (expected {TMN_PUBLISHED_TOTAL_ENTITIES})\n{stats}"
        ),
    )
}

const CRITERIA: [Criterion; 11] = [
    ("gradient correctness", gradients),
    ("crf exactness", crf),
    ("metric oracle", metrics),
    ("sine relu values", sine_relu),
    ("configuration fidelity", configuration),
    ("overfit smoke tests", overfit),
    ("attention normalization", attention),
    ("top-5 image words", top5),
    ("tokenizer round trip", tokenizer),
    ("determinism", determinism),
    ("dataset statistics", dataset_statistics),
];

fn main() -> ExitCode {
    // `cargo test -- --list` and similar probes expect no work
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Outcome::Fail(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{status} {:>2}. {name} ({secs:.1}s): {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
