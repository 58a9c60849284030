use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use mner_core::data::synthetic_dir;
use mner_core::seqdata::{Tag, TagScheme};

fn mner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mner"))
        .args(args)
        .arg("--quiet")
        .env_remove("MNER_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn mner_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mner"))
        .args(args)
        .arg("--quiet")
        .env_remove("MNER_DATA_ROOT")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data(name: &str) -> String {
    synthetic_dir().join(name).display().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, Output) {
    let ckpt = dir.join(name);
    let (train, sidecar) = (data("train.txt"), data("sidecar.tsv"));
    let mut args = vec![
        "train",
        "--train",
        &train,
        "--sidecar",
        &sidecar,
        "--checkpoint",
        path(&ckpt),
    ];
    args.extend_from_slice(extra);
    let out = mner(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    (ckpt.clone(), out)
}

fn eval(ckpt: &Path, extra: &[&str]) -> Output {
    let (train, sidecar) = (data("train.txt"), data("sidecar.tsv"));
    let mut args = vec![
        "eval",
        "--checkpoint",
        path(ckpt),
        "--data",
        &train,
        "--sidecar",
        &sidecar,
    ];
    args.extend_from_slice(extra);
    mner(&args)
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .parse()
        .unwrap()
}

#[test]
fn cwi_overfits_and_eval_reports_near_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, out) = train(
        dir.path(),
        "cwi.ckpt",
        &[
            "--model",
            "cwi",
            "--epochs",
            "50",
            "--lr",
            "2e-3",
            "--stop-at-train-f1",
            "1.0",
        ],
    );
    assert!(stdout(&out).contains("model=cwi"));
    let report = eval(&ckpt, &["--report-kv"]);
    assert_eq!(report.status.code(), Some(0), "{}", stderr(&report));
    assert!(kv(&stdout(&report), "overall.f1") >= 0.95, "{}", stdout(&report));
}

#[test]
fn same_seed_gives_identical_checkpoints_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--model", "msb-tiny", "--epochs", "2", "--lr", "1e-3", "--seed", "3"];
    let (a, out_a) = train(dir.path(), "a.ckpt", &args);
    let (b, out_b) = train(dir.path(), "b.ckpt", &args);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let strip = |o: &Output| {
        stdout(o)
            .lines()
            .filter(|l| !l.starts_with("checkpoint="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&out_a), strip(&out_b));
    let (ra, rb) = (eval(&a, &[]), eval(&b, &[]));
    assert_eq!(stdout(&ra), stdout(&rb));
    assert!(stdout(&ra).starts_with("    Per.    Loc.    Org.   Misc.   Prec.  Recall      F1\n"));
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, out) = train(dir.path(), "init.ckpt", &["--model", "msb-tiny", "--epochs", "0"]);
    assert!(stdout(&out).contains("epochs=0"));
    assert!(stdout(&out).contains("final_loss=-"));
    assert_eq!(eval(&ckpt, &[]).status.code(), Some(0));
}

#[test]
fn crf_masked_tagging_is_legal_and_line_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(
        dir.path(),
        "crf.ckpt",
        &[
            "--model",
            "msb-tiny",
            "--use-crf",
            "--set",
            "mask_illegal=true",
            "--epochs",
            "1",
            "--lr",
            "1e-3",
        ],
    );
    let input = "img000\tRT @ Obama : great night in New York https://t.co/abc\n\nhello world\nParis Hilton at the Louvre today\n";
    let sidecar = data("sidecar.tsv");
    let out = mner_with_stdin(&["tag", "--checkpoint", path(&ckpt), "--sidecar", &sidecar], input);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let sentences: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(sentences.len(), 3);
    let tokens = 9 + 2 + 6;
    assert_eq!(text.lines().count(), tokens + 2);
    for s in sentences {
        let tags: Vec<Tag> = s
            .lines()
            .map(|l| Tag::parse(l.split('\t').nth(1).unwrap()).unwrap())
            .collect();
        TagScheme::check_sequence(&tags).unwrap();
    }
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(dir.path(), "m.ckpt", &["--model", "msb-tiny", "--epochs", "0"]);
    let out = mner_with_stdin(&["tag", "--checkpoint", path(&ckpt)], "");
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn corpus_without_entities_reports_zero_support() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("plain.txt");
    fs::write(&corpus, "IMGID:x\nhello\tO\nworld\tO\n\nIMGID:y\nnothing\tO\n").unwrap();
    let (ckpt, _) = train(dir.path(), "m.ckpt", &["--model", "msb-tiny", "--epochs", "0"]);
    let out = mner(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(&corpus),
        "--report-kv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(kv(&text, "overall.recall"), 0.0);
    assert!(text.contains("overall.zero_support=true"), "{text}");
}

#[test]
fn eval_refuses_mismatched_settings_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(dir.path(), "m.ckpt", &["--model", "msb-tiny", "--epochs", "0"]);
    let refused = eval(&ckpt, &["--set", "hidden=64"]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(stderr(&refused).contains("version mismatch"), "{}", stderr(&refused));
    assert_eq!(eval(&ckpt, &["--set", "hidden=64", "--force"]).status.code(), Some(0));
    assert_eq!(eval(&ckpt, &["--set", "hidden=128"]).status.code(), Some(0));
    let wrong_kind = eval(&ckpt, &["--model", "cwi"]);
    assert_eq!(wrong_kind.status.code(), Some(2));
}

#[test]
fn missing_files_name_the_path_and_exit_2() {
    let out = mner(&[
        "train",
        "--model",
        "cwi",
        "--train",
        "/nonexistent/corpus.txt",
        "--checkpoint",
        "x.ckpt",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/corpus.txt"), "{}", stderr(&out));
    let out = mner(&["eval", "--checkpoint", "/nonexistent/m.ckpt", "--data", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/m.ckpt"));
}

#[test]
fn corrupted_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(dir.path(), "m.ckpt", &["--model", "msb-tiny", "--epochs", "0"]);
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&ckpt, bytes).unwrap();
    let out = eval(&ckpt, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(mner(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mner(&["train", "--epochs", "many"]).status.code(), Some(1));
    assert_eq!(mner(&["train", "--model", "cwi"]).status.code(), Some(1));
    let train = data("train.txt");
    let unknown_model = mner(&["train", "--model", "gpt", "--train", &train, "--checkpoint", "x"]);
    assert_eq!(unknown_model.status.code(), Some(1));
    let sidecar = data("sidecar.tsv");
    let msb_regularizers = mner(&[
        "train",
        "--model",
        "msb-tiny",
        "--no-regularizers",
        "--train",
        &train,
        "--sidecar",
        &sidecar,
        "--checkpoint",
        "x",
        "--epochs",
        "0",
    ]);
    assert_eq!(msb_regularizers.status.code(), Some(1), "{}", stderr(&msb_regularizers));
    assert_eq!(mner(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_and_data_root_supply_settings() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    fs::write(
        &config,
        "# smoke run\nmodel = msb-tiny\ntrain = train.txt\nsidecar = sidecar.tsv\nepochs = 0\nseed = 5\nmodel.hidden = 64\nmodel.heads = 4\n",
    )
    .unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let out = Command::new(env!("CARGO_BIN_EXE_mner"))
        .args([
            "train",
            "--config",
            path(&config),
            "--checkpoint",
            path(&ckpt),
            "--quiet",
        ])
        .env("MNER_DATA_ROOT", synthetic_dir())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("seed=5"));
    let stored = mner_core::checkpoint::Checkpoint::load(&ckpt).unwrap();
    assert_eq!(stored.config.get("hidden"), Some("64"));
    assert_eq!(stored.config.get("heads"), Some("4"));

    fs::write(&config, "modle = cwi\n").unwrap();
    let bad = mner(&["verify", "--config", path(&config)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("modle"));
}

#[test]
fn no_regularizers_and_embedding_dims_reach_the_cwi_config() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(
        dir.path(),
        "cwi.ckpt",
        &["--model", "cwi", "--epochs", "0", "--no-regularizers"],
    );
    let stored = mner_core::checkpoint::Checkpoint::load(&ckpt).unwrap();
    assert_eq!(stored.config.get("regularizers"), Some("false"));
    let bad_dim = mner(&[
        "train",
        "--model",
        "cwi",
        "--glove-dim",
        "100",
        "--train",
        &data("train.txt"),
        "--sidecar",
        &data("sidecar.tsv"),
        "--checkpoint",
        path(&dir.path().join("x.ckpt")),
        "--epochs",
        "0",
    ]);
    assert_eq!(bad_dim.status.code(), Some(2), "{}", stderr(&bad_dim));
}

#[test]
fn verify_passes_and_corrupted_gradients_fail_with_exit_3() {
    let ok = mner(&["verify", "--seeds", "3"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("17 checks, 0 failed"));
    let bad = mner(&["verify", "--seeds", "2", "--corrupt-gradients"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).contains("FAIL  gradient: conv1d"));
}
