use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prl_core::model::{Checkpoint, HeadKind};
use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn prl(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prl"))
        .args(args)
        .current_dir(repo())
        .env("PRL_RUN_DIR", runs)
        .output()
        .expect("spawn prl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["-c", "configs/train.json", "--epochs", "2"];

/// Runs `prl train` and returns the run directory it printed.
fn train(runs: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = prl(runs, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    PathBuf::from(stdout(&o).split('\t').next().unwrap().trim())
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_corpus_is_deterministic_and_reports_floor() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    for out in [&a, &b] {
        let o = prl(
            dir.path(),
            &["gen-corpus", "data/sample_hmm.json", out.to_str().unwrap()],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report = read_json(&dir.path().join("a.tsv.floor.json"));
    let floor = report["tag_oracle_ppl"].as_f64().unwrap();
    assert!((floor - 13.8415).abs() < 1e-3, "{floor}");
}

#[test]
fn gen_corpus_rejects_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    std::fs::write(
        &spec,
        r#"{"states": 2, "emissions": [[0.5, 0.5], [0.5, 0.5]],
            "transitions": [[0.8, 0.1], [0.5, 0.5]], "seed": 1, "length": 10}"#,
    )
    .unwrap();
    let o = prl(
        dir.path(),
        &["gen-corpus", spec.to_str().unwrap(), "/dev/null"],
    );
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("sums to"), "{}", stderr(&o));
}

#[test]
fn train_then_eval_reproduces_validation_ppl() {
    let runs = tempfile::tempdir().unwrap();
    let run = train(
        runs.path(),
        &[
            "--head",
            "q",
            "--gamma-q",
            "0.9",
            "--gamma-trace",
            "0.9",
            "--seed",
            "1",
        ],
    );
    for f in [
        "manifest.json",
        "train_log.csv",
        "train_log.json",
        "best.prl",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest = read_json(&run.join("manifest.json"));
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["config"]["model"]["head"], "q");
    assert!(manifest["corpora"][0]["sha256"].as_str().unwrap().len() == 64);

    let log = read_json(&run.join("train_log.json"));
    let best = log["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["valid_ppl"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    let ck = run.join("best.prl");
    let valid = run.join("valid.tsv");
    let args = ["eval", ck.to_str().unwrap(), valid.to_str().unwrap()];
    let first = prl(runs.path(), &args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let report: Value = serde_json::from_str(&stdout(&first)).unwrap();
    assert!((report["ppl"].as_f64().unwrap() - best).abs() < 1e-9);
    assert!(report["tag_accuracy"].is_number());
    let second = prl(runs.path(), &args);
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn baseline_checkpoint_has_no_head_and_refuses_self_trace() {
    let runs = tempfile::tempdir().unwrap();
    let run = train(runs.path(), &["--head", "none", "--seed", "3"]);
    let ck = Checkpoint::load(run.join("best.prl")).unwrap();
    assert_eq!(ck.model.config().head, HeadKind::None);
    let o = prl(
        runs.path(),
        &[
            "eval",
            run.join("best.prl").to_str().unwrap(),
            run.join("valid.tsv").to_str().unwrap(),
            "--trace-mode",
            "self",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn no_trace_flag_trains_the_ablation() {
    let runs = tempfile::tempdir().unwrap();
    let run = train(runs.path(), &["--head", "q", "--no-trace", "--seed", "4"]);
    let ck = Checkpoint::load(run.join("best.prl")).unwrap();
    assert_eq!(ck.model.config().head, HeadKind::Q);
    assert!(!ck.model.config().use_trace);
}

#[test]
fn eval_rejects_foreign_vocabulary() {
    let runs = tempfile::tempdir().unwrap();
    let run = train(runs.path(), &["--epochs", "1", "--seed", "5"]);
    let other = runs.path().join("other.tsv");
    std::fs::write(&other, "zz\tS0\nyy\tS1\n").unwrap();
    let o = prl(
        runs.path(),
        &[
            "eval",
            run.join("best.prl").to_str().unwrap(),
            other.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("vocabulary"));
}

#[test]
fn exit_codes() {
    let runs = tempfile::tempdir().unwrap();
    let missing = prl(
        runs.path(),
        &[
            "train",
            "--train-data",
            "/no/such/file",
            "--valid-data",
            "/no/such/file",
        ],
    );
    assert_eq!(code(&missing), 3);
    assert_eq!(
        code(&prl(runs.path(), &["train", "--no-such-option", "1"])),
        2
    );
    assert_eq!(code(&prl(runs.path(), &["frobnicate"])), 2);

    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&[
        "--head",
        "none",
        "--lr",
        "500",
        "--clip",
        "0",
        "--divergence-factor",
        "1.0001",
    ]);
    let diverged = prl(runs.path(), &args);
    assert_eq!(code(&diverged), 4, "{}", stderr(&diverged));
    let run = std::fs::read_dir(runs.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.join("manifest.json").exists())
        .unwrap();
    assert!(run.join("train_log.csv").exists());
    assert_eq!(read_json(&run.join("manifest.json"))["status"], "diverged");
}

#[test]
fn config_hash_ignores_key_order() {
    let runs = tempfile::tempdir().unwrap();
    let a = runs.path().join("a.json");
    let b = runs.path().join("b.json");
    std::fs::write(
        &a,
        r#"{"train": {"epochs": 1, "seed": 9}, "data": {"hmm_spec": "data/sample_hmm.json"}}"#,
    )
    .unwrap();
    std::fs::write(
        &b,
        r#"{"data": {"hmm_spec": "data/sample_hmm.json"}, "train": {"seed": 9, "epochs": 1}}"#,
    )
    .unwrap();
    let small = ["--embed-dim", "8", "--lm-hidden", "8", "--aux-hidden", "4"];
    let mut dirs = Vec::new();
    for cfg in [&a, &b] {
        let mut args = vec!["train", "-c", cfg.to_str().unwrap()];
        args.extend_from_slice(&small);
        let o = prl(runs.path(), &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        dirs.push(stdout(&o).split('\t').next().unwrap().to_string());
    }
    assert_eq!(dirs[0], dirs[1]);
}

fn experiment(runs: &Path, config: &str) -> (String, PathBuf) {
    let path = runs.join("exp.json");
    std::fs::write(&path, config).unwrap();
    let o = prl(
        runs,
        &["experiment", path.to_str().unwrap(), "--epochs", "1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = std::fs::read_dir(runs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap();
    (stdout(&o), dir)
}

const EXP_BASE: &str = r#""data": {"hmm_spec": "data/sample_hmm.json"},
    "model": {"embed_dim": 8, "lm_hidden": 8, "aux_hidden": 4},
    "train": {"batch_size": 8, "bptt_len": 20, "dropout": 0.0, "lr": 5.0, "clip": 1.0},
    "eval": {"batch_size": 10, "bptt_len": 20, "trace_mode": "gold"},
    "jobs": 2"#;

#[test]
fn comparison_matrix_has_nine_cells() {
    let runs = tempfile::tempdir().unwrap();
    let (out, dir) = experiment(
        runs.path(),
        &format!(
            r#"{{"kind": "comparison", "variants": ["baseline", "prl-p", "prl-q"], "seeds": [1, 2, 3], {EXP_BASE}}}"#
        ),
    );
    assert!(out.starts_with("label,variant"));
    let result = read_json(&dir.join("result.json"));
    assert_eq!(result["cells"].as_array().unwrap().len(), 9);
    assert_eq!(result["aggregates"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(dir.join("aggregates.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("ppl_stderr"));
    assert!(csv.lines().next().unwrap().contains("delta_ppl"));
}

#[test]
fn size_sweep_reports_percent_change_per_size() {
    let runs = tempfile::tempdir().unwrap();
    let (_, dir) = experiment(
        runs.path(),
        &format!(
            r#"{{"kind": "size-sweep", "variants": ["baseline", "prl-q"], "seeds": [1, 2], "sizes": [2500, 5000], {EXP_BASE}}}"#
        ),
    );
    let csv = std::fs::read_to_string(dir.join("aggregates.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let pct = header.iter().position(|h| *h == "pct_change").unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for size in ["2500", "5000"] {
        assert!(rows
            .iter()
            .any(|r| r[0] == size && r[2] == "prl-q" && !r[pct].is_empty()));
    }
}

#[test]
fn oracle_curve_reports_spearman() {
    let runs = tempfile::tempdir().unwrap();
    let (out, dir) = experiment(
        runs.path(),
        &format!(
            r#"{{"kind": "oracle-curve", "seeds": [1, 2], "aux_sizes": [1, 2, 4], "with_baseline_tagger": false, {EXP_BASE}}}"#
        ),
    );
    assert!(out.contains("spearman seed 1"));
    let result = read_json(&dir.join("result.json"));
    assert_eq!(result["points"].as_array().unwrap().len(), 6);
    assert!(result.get("spearman_pooled").is_some());
}
