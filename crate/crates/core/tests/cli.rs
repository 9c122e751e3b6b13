//! End-to-end runs of the `artree` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use artree::checkpoint::load_checkpoint;
use artree::synthetic::{keyword_dataset, to_jsonl, KeywordTask};
use tempfile::TempDir;

fn artree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artree")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_data(dir: &Path) -> String {
    let task = KeywordTask {
        sentences: 24,
        length: 5,
        vocab_size: 12,
        seed: 3,
    };
    let path = dir.join("train.jsonl");
    fs::write(&path, to_jsonl(&keyword_dataset(&task))).unwrap();
    path.display().to_string()
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let data = write_data(dir);
    let out_dir = dir.join(out).display().to_string();
    let mut args = vec![
        "train".to_string(),
        "--set".into(),
        format!("train={data}"),
        "--set".into(),
        format!("valid={data}"),
        "--set".into(),
        format!("output_dir={out_dir}"),
    ];
    for s in ["epochs=2", "dim_word=6", "dim_hidden=4", "dim_classifier=8", "batch_size=8"] {
        args.push("--set".into());
        args.push(s.into());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    artree(&refs)
}

#[test]
fn train_writes_metrics_config_and_checkpoint() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), "run", &["--override", "alpha=0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (k, rec) in lines.iter().enumerate() {
        assert_eq!(rec["epoch"], k + 1);
        assert!(rec["train_loss"].as_f64().unwrap().is_finite());
        let acc = rec["valid_acc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let config = fs::read_to_string(run.join("effective_config.txt")).unwrap();
    assert!(config.lines().any(|l| l == "alpha = 0.0"), "{config}");
    assert!(run.join("best.ckpt").exists());
    assert!(stdout(&o).contains("checkpoint\t"));
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    assert!(train(dir.path(), "first", &[]).status.success());
    let first = dir.path().join("first");
    let config = first.join("effective_config.txt").display().to_string();
    let second = dir.path().join("second").display().to_string();
    let o = artree(&["train", "--config", &config, "--set", &format!("output_dir={second}")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(first.join("metrics.jsonl")).unwrap();
    let b = fs::read_to_string(dir.path().join("second/metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    let a = load_checkpoint(&first.join("best.ckpt")).unwrap();
    let b = load_checkpoint(&dir.path().join("second/best.ckpt")).unwrap();
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(a.rng, b.rng);
}

#[test]
fn inference_subcommands() {
    let dir = TempDir::new().unwrap();
    assert!(train(dir.path(), "run", &[]).status.success());
    let ckpt = dir.path().join("run/best.ckpt").display().to_string();
    let data = dir.path().join("train.jsonl").display().to_string();

    let eval = artree(&["eval", "--checkpoint", &ckpt, "--data", &data]);
    assert!(eval.status.success());
    let acc: f64 = stdout(&eval).trim().strip_prefix("accuracy\t").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let parse = artree(&["parse", "--checkpoint", &ckpt, "--format", "both", "w1 kw w2", "w3"]);
    assert!(parse.status.success());
    let text = stdout(&parse);
    assert!(text.lines().next().unwrap().starts_with('('));
    assert!(text.contains("(w3)\n"));
    assert_eq!(text.matches("digraph tree {").count(), 2);

    let score = artree(&["score", "--checkpoint", &ckpt, "w1 kw w2"]);
    let rows: Vec<Vec<String>> = stdout(&score).lines().map(|l| l.split('\t').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "kw");
    assert!(rows.iter().any(|r| r[2] == "0"));

    let report = artree(&["depth-report", "--checkpoint", &ckpt, "--data", &data, "--group", "kw=kw", "--group", "all=*", "--group", "none=zzz"]);
    assert!(report.status.success());
    let text = stdout(&report);
    assert!(text.starts_with("group\tcount\tmean_depth\tmedian_depth\tmean_score\n"));
    assert!(text.contains("none\tabsent"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.jsonl").display().to_string();
    let o = artree(&["train", "--set", &format!("train={missing}")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.jsonl"));

    assert_eq!(artree(&["train", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(artree(&["train", "--set", "alpha=-1"]).status.code(), Some(2));
    assert_eq!(artree(&["frobnicate"]).status.code(), Some(2));

    let ckpt = dir.path().join("nothing.ckpt").display().to_string();
    assert_eq!(artree(&["parse", "--checkpoint", &ckpt, "a b"]).status.code(), Some(4));
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = junk.display().to_string();
    assert_eq!(artree(&["parse", "--checkpoint", &junk, "a b"]).status.code(), Some(3));
}
