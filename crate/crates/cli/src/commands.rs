//! The four subcommands.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use anyhow::anyhow;
use log::{info, warn};

use mner_core::checkpoint::Checkpoint;
use mner_core::data::{load_sidecar, load_subword_vocab, synthetic_dir};
use mner_core::error::Error as CoreError;
use mner_core::metrics::{report_format, report_kv};
use mner_core::model::{ModelKind, SequenceTagger};
use mner_core::pipeline::{build, from_checkpoint, model_config, to_checkpoint};
use mner_core::seqdata::{preprocess_text, Example, Sidecar};
use mner_core::train::{evaluate_model, predict_all, train, TrainConfig};
use mner_core::verify::{format_results, run_all, VerifyOptions};

use crate::settings::{require_file, Settings};
use crate::{Cli, Command, EvalArgs, Failure, TagArgs, TrainArgs, VerifyArgs};

pub fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::load(cli.config.as_deref(), cli.data_root)?;
    match cli.command {
        Command::Train(a) => train_cmd(&settings, a),
        Command::Eval(a) => eval_cmd(&settings, a),
        Command::Tag(a) => tag_cmd(&settings, a),
        Command::Verify(a) => verify_cmd(&settings, a),
    }
}

fn model_kind(name: String) -> Result<ModelKind, Failure> {
    name.parse().map_err(|e: CoreError| e.into())
}

fn write_stdout(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::from(CoreError::from(e)))
}

fn train_cmd(s: &Settings, a: TrainArgs) -> Result<(), Failure> {
    let kind = model_kind(s.required(a.model, "model", "--model")?)?;
    let train_path = s.input(a.train, "train", "--train")?;
    let dev_path = s.path(a.dev, "dev")?;
    if let Some(p) = &dev_path {
        require_file(p, "--dev")?;
    }
    let checkpoint: PathBuf = s.required(a.checkpoint, "checkpoint", "--checkpoint")?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: s.value(a.epochs, "epochs")?.unwrap_or(defaults.epochs),
        learning_rate: s
            .value(a.learning_rate, "learning_rate")?
            .unwrap_or(defaults.learning_rate),
        batch_size: s.value(a.batch_size, "batch_size")?.unwrap_or(defaults.batch_size),
        seed: s.value(a.seed, "seed")?.unwrap_or(defaults.seed),
        stop_at_train_f1: s.value(a.stop_at_train_f1, "stop_at_train_f1")?,
        ..defaults
    };
    let overrides = s.model_overrides(&a.model_args)?;
    let resources = s.resources(a.resources)?;
    let train_set = s.corpus(&train_path, &a.corpus)?;
    let dev_set = match &dev_path {
        Some(p) => Some(s.corpus(p, &a.corpus)?),
        None => None,
    };
    info!(
        "read {} training sentences from {}",
        train_set.len(),
        train_path.display()
    );

    let mut model = build(kind, &overrides, &resources, &train_set, config.seed)?;
    let hash = model.config().hash();
    info!(
        "model {kind}: {} parameters, config hash {hash:016x}, seed {}, {} epochs, learning rate {}, batch size {}",
        model.params().num_scalars(),
        config.seed,
        config.epochs,
        config.learning_rate,
        config.batch_size
    );
    let logs = train(&mut model, &train_set, dev_set.as_deref(), &config, |log| {
        let dev = log
            .dev_f1
            .map(|f| format!("{:.2}", 100.0 * f))
            .unwrap_or_else(|| "-".into());
        let train_f1 = log
            .train_f1
            .map(|f| format!(", train F1 {:.2}", 100.0 * f))
            .unwrap_or_default();
        info!("epoch {}: loss {:.6}, dev F1 {dev}{train_f1}", log.epoch, log.mean_loss);
    })?;

    let mut meta = BTreeMap::new();
    meta.insert("train.seed".to_string(), config.seed.to_string());
    meta.insert("train.epochs".to_string(), logs.len().to_string());
    meta.insert("train.learning_rate".to_string(), config.learning_rate.to_string());
    meta.insert("train.batch_size".to_string(), config.batch_size.to_string());
    meta.insert("train.corpus".to_string(), train_path.display().to_string());
    to_checkpoint(&model, meta).save(&checkpoint)?;
    info!("wrote {}", checkpoint.display());

    let last = logs.last();
    let loss = last
        .map(|l| format!("{:.6}", l.mean_loss))
        .unwrap_or_else(|| "-".into());
    let dev = last
        .and_then(|l| l.dev_f1)
        .map(|f| format!("{:.2}", 100.0 * f))
        .unwrap_or_else(|| "-".into());
    write_stdout(&format!(
        "model={kind}\nconfig_hash={hash:016x}\nseed={}\nepochs={}\nfinal_loss={loss}\ndev_f1={dev}\ncheckpoint={}\n",
        config.seed,
        logs.len(),
        checkpoint.display()
    ))
}

fn load_checkpoint(s: &Settings, flag: Option<PathBuf>) -> Result<Checkpoint, Failure> {
    let path = s.input(flag, "checkpoint", "--checkpoint")?;
    Ok(Checkpoint::load(&path)?)
}

fn eval_cmd(s: &Settings, a: EvalArgs) -> Result<(), Failure> {
    let mut ckpt = load_checkpoint(s, a.checkpoint)?;
    let data = s.input(a.data, "data", "--data")?;
    if let Some(name) = s.value(a.model, "model")? {
        let kind = model_kind(name)?;
        if kind != ckpt.kind {
            return Err(CoreError::Version(format!("checkpoint holds a {} model, not {kind}", ckpt.kind)).into());
        }
    }
    let overrides = s.model_overrides(&a.model_args)?;
    model_config(ckpt.kind, &overrides)?;
    let differing: Vec<String> = overrides
        .keys()
        .filter(|k| ckpt.config.get(k) != overrides.get(k))
        .map(|k| {
            format!(
                "{k}={} (checkpoint: {})",
                overrides.get(k).unwrap_or_default(),
                ckpt.config.get(k).unwrap_or("unset")
            )
        })
        .collect();
    if !differing.is_empty() {
        let detail = format!("settings differ from the checkpoint's: {}", differing.join(", "));
        if !a.force {
            return Err(CoreError::Version(format!(
                "{detail}; pass --force to evaluate with the checkpoint's settings"
            ))
            .into());
        }
        warn!("{detail}; using the checkpoint's settings (--force)");
    }
    let resources = s.resources(a.resources)?;
    let model = from_checkpoint(&ckpt, &resources)?;
    ckpt.tensors.clear();
    let examples = s.corpus(&data, &a.corpus)?;
    info!(
        "scoring {} model on {} sentences from {}",
        ckpt.kind,
        examples.len(),
        data.display()
    );
    let report = evaluate_model(&model, &examples)?;
    if a.report_kv {
        write_stdout(&report_kv(&report))
    } else {
        write_stdout(&report_format(&report))
    }
}

fn read_input(s: &Settings, input: Option<PathBuf>) -> Result<String, Failure> {
    match input {
        Some(p) if p.as_os_str() != "-" => {
            let p = s.resolve(p);
            require_file(&p, "--input")?;
            Ok(mner_core::data::read_to_string(&p)?)
        }
        _ => {
            let mut text = String::new();
            io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Failure::from(CoreError::from(e)))?;
            Ok(text)
        }
    }
}

/// Sentences from `IMAGE_ID<TAB>text` or plain text lines; URLs are
/// removed and lines left without tokens are skipped.
fn parse_sentences(text: &str, sidecar: Option<&Sidecar>) -> Vec<Example> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (image, raw) = match line.split_once('\t') {
            Some((id, rest)) => (Some(id.trim()), rest),
            None => (None, line),
        };
        let tokens = preprocess_text(raw);
        if tokens.is_empty() {
            continue;
        }
        let mut ex = Example::untagged(format!("line {}", i + 1), tokens);
        if let Some(id) = image {
            match sidecar.and_then(|sc| sc.get(id)) {
                Some(words) => ex.image_words = words.to_vec(),
                None => warn!("line {}: no image words for image {id:?}", i + 1),
            }
        }
        out.push(ex);
    }
    out
}

fn tag_cmd(s: &Settings, a: TagArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(s, a.checkpoint)?;
    let resources = s.resources(a.resources)?;
    let model = from_checkpoint(&ckpt, &resources)?;
    let sidecar = match s.path(a.sidecar, "sidecar")? {
        Some(p) => {
            require_file(&p, "--sidecar")?;
            Some(load_sidecar(&p)?)
        }
        None => None,
    };
    let text = read_input(s, a.input)?;
    let sentences = parse_sentences(&text, sidecar.as_ref());
    let tags = predict_all(&model, &sentences)?;
    let mut out = String::new();
    for (i, (ex, tags)) in sentences.iter().zip(&tags).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (token, tag) in ex.tokens.iter().zip(tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
    }
    write_stdout(&out)
}

fn verify_cmd(s: &Settings, a: VerifyArgs) -> Result<(), Failure> {
    let vocab_path = s
        .path(a.vocab, "vocab")?
        .unwrap_or_else(|| synthetic_dir().join("vocab.txt"));
    require_file(&vocab_path, "--vocab")?;
    let vocab = load_subword_vocab(&vocab_path)?;
    if a.seeds == 0 {
        return Err(Failure::usage(anyhow!("--seeds must be positive")));
    }
    let results = run_all(
        VerifyOptions {
            seeds: a.seeds,
            corrupt_gradients: a.corrupt_gradients,
        },
        &vocab,
    );
    write_stdout(&format_results(&results))?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::verification(format!(
            "{failed} of {} checks failed",
            results.len()
        )));
    }
    Ok(())
}
