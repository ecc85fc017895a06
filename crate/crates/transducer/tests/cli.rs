use std::path::Path;
use std::process::{Command, Output};

use attn_transducer::report::BenchReport;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attn-transducer")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "
[model]
feature_dim = 8
pyramid_layers = 2
lstm_layers = 1
encoder_dim = 16
decoder_dim = 8
heads = 2
context = 1
chunk_width = 2
vocab_size = 4

[train]
steps = 3
batch_frames = 300

[task]
vocab_size = 4
feature_dim = 8
utterances = 12
";

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("run.toml");
    std::fs::write(&config, SMALL).unwrap();
    let ckpt = d.join("model.ckpt");
    let vocab = d.join("vocab.txt");
    let data = d.join("test");

    let log = ok(&["train", "--config", s(&config), "--checkpoint", s(&ckpt), "--vocab", s(&vocab), "--seed", "3", "--deterministic"]);
    assert_eq!(log.lines().filter(|l| l.starts_with("step ")).count(), 3);
    ok(&["gen-data", "--config", s(&config), "--seed", "9", "--utterances", "4", s(&data)]);
    let manifest = data.join("manifest.tsv");

    let decoded = ok(&["decode", "--checkpoint", s(&ckpt), "--vocab", s(&vocab), "--beam", "2", s(&manifest)]);
    assert_eq!(decoded.lines().count(), 4);
    let greedy = ok(&["decode", "--checkpoint", s(&ckpt), "--vocab", s(&vocab), "--quantized", s(&manifest)]);
    assert_eq!(greedy.lines().count(), 4);

    let qckpt = d.join("model.q.ckpt");
    ok(&["quantize", "--checkpoint", s(&ckpt), "--output", s(&qckpt)]);
    assert!(std::fs::metadata(&qckpt).unwrap().len() < std::fs::metadata(&ckpt).unwrap().len());

    let table = ok(&["stream-bench", "--checkpoint", s(&qckpt), "--vocab", s(&vocab), "--tau", "2", s(&manifest)]);
    let report = BenchReport::parse_tsv(&table).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.lookahead_ms, 2.0 * 4.0 * 10.0);

    let errors = ok(&["report-errors", "--checkpoint", s(&ckpt), "--checkpoint", s(&qckpt), "--vocab", s(&vocab), s(&manifest)]);
    assert_eq!(errors.lines().count(), 3);
}

#[test]
fn deterministic_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL).unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    ok(&["train", "--config", s(&config), "--checkpoint", s(&a), "--deterministic"]);
    ok(&["train", "--config", s(&config), "--checkpoint", s(&b), "--deterministic"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn contract_violations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = cli(&["decode", "--checkpoint", s(&missing), "--vocab", "v", "m"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nheads = 3\n").unwrap();
    let out = cli(&["train", "--config", s(&bad), "--checkpoint", s(&missing)]);
    assert!(!out.status.success());
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}
