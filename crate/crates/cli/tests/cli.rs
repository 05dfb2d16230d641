use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

// Small and quick: enough to exercise every subcommand, not to learn well.
const QUICK: &[&str] = &[
    "--set",
    "teacher.epochs=3",
    "--set",
    "student.epochs=2",
    "--set",
    "distill.dump_signals_every=1",
    "--set",
    "split.k_folds=2",
];

fn latentg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = latentg(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_chain(dir: &Path) {
    ok(dir, &[QUICK, &["synth", "--n", "300"]].concat());
    for cmd in ["prep", "stats", "tfidf", "train-teacher", "algorithm1", "train-student"] {
        ok(dir, &[QUICK, &[cmd]].concat());
    }
    ok(dir, &[QUICK, &["evaluate", "--model", "teacher"]].concat());
    ok(dir, &[QUICK, &["evaluate"]].concat());
    ok(dir, &[QUICK, &["baseline"]].concat());
}

#[test]
fn student_before_algorithm1_names_the_missing_step() {
    let dir = TempDir::new().unwrap();
    let o = latentg(dir.path(), &["train-student"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("algorithm1"), "{}", stderr(&o));

    let o = latentg(dir.path(), &["prep"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("latentg synth"));
}

#[test]
fn invalid_configuration_exits_one() {
    let dir = TempDir::new().unwrap();
    let o = latentg(dir.path(), &["--set", "loss.alhpa=0.3", "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key"));
    assert_eq!(latentg(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(latentg(dir.path(), &["--set", "split.test_fraction=1.5", "synth"]).status.code(), Some(1));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "loss.alpha = 0.3\nvocab.max_len = lots\n").unwrap();
    let o = latentg(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn synth_is_byte_identical_under_one_seed() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    ok(a.path(), &["--seed", "7", "synth", "--n", "2000"]);
    ok(b.path(), &["--seed", "7", "synth", "--n", "2000"]);
    let read = |d: &TempDir| fs::read(d.path().join("corpus.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    ok(b.path(), &["--seed", "8", "synth", "--n", "2000"]);
    assert_ne!(read(&a), read(&b));
}

#[test]
fn prep_cleans_a_user_csv() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("raw.csv");
    let mut csv = String::from("id,statement,status\n");
    for i in 0..12 {
        let label = if i % 2 == 0 { "Normal" } else { "Anxiety" };
        csv.push_str(&format!("{i},\"Visit http://x.org/{i} NOW, ok?! [{i}]\",{label}\n"));
    }
    fs::write(&input, csv).unwrap();
    ok(dir.path(), &["prep", "--input", input.to_str().unwrap()]);
    let cleaned = fs::read_to_string(dir.path().join("cleaned.csv")).unwrap();
    assert!(cleaned.starts_with("id,raw_text,clean_text,label\n"));
    assert!(cleaned.contains(",visit now ok,"), "{cleaned}");
    let counts = fs::read_to_string(dir.path().join("class_counts.csv")).unwrap();
    assert!(counts.contains("Normal,6") && counts.contains("Anxiety,6"), "{counts}");
    assert!(fs::read_to_string(dir.path().join("length_hist.csv")).unwrap().contains("3,12"));

    let missing = dir.path().join("nope.csv");
    assert_eq!(latentg(dir.path(), &["prep", "--input", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn full_chain_is_reproducible_and_recorded() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run_chain(a.path());
    run_chain(b.path());
    for rel in ["teacher/metrics.json", "student/metrics.json", "student/training_log.csv", "baseline_metrics.json"] {
        assert_eq!(
            fs::read(a.path().join(rel)).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel} differs between same-seed runs"
        );
    }

    let dir = a.path();
    let effective = fs::read_to_string(dir.join("effective_config.txt")).unwrap();
    let digest = effective.lines().next().unwrap().strip_prefix("# config digest ").unwrap().to_string();
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("student/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["config_digest"], digest.as_str());
    let confusion = fs::read_to_string(dir.join("student/confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 7);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("artifacts.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    for rel in [
        "corpus.csv",
        "train.csv",
        "tfidf_train.csv",
        "vocab.txt",
        "teacher/model.ckpt",
        "teacher_features.bin",
        "gmm.bin",
        "gmm_report.json",
        "student/model.ckpt",
        "student/signals_epoch2.csv",
        "student/metrics.json",
        "baseline_metrics.json",
    ] {
        let e = &artifacts[rel];
        let bytes = fs::read(dir.join(rel)).unwrap();
        assert_eq!(e["sha256"], latentg::sha256_hex(&bytes).as_str(), "{rel}");
        assert_eq!(e["config_digest"], digest.as_str(), "{rel}");
    }
    assert_eq!(artifacts["gmm.bin"]["producer"], "algorithm1");

    let log = fs::read_to_string(dir.join("student/training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let signals = fs::read_to_string(dir.join("student/signals_epoch1.csv")).unwrap();
    assert!(signals.starts_with("id,p,dist,component\n"));
    assert_eq!(signals.lines().count(), 241);
}

#[test]
fn evaluate_refuses_a_different_label_set() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200"]);
    ok(d, &["prep"]);
    ok(d, &[QUICK, &["train-teacher"]].concat());
    let reordered = "corpus.labels=Depression,Normal,Suicidal,Anxiety,Stress,Bipolar,Personal Disorder";
    let o = latentg(d, &[QUICK, &["--set", reordered, "evaluate", "--model", "teacher"]].concat());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
    assert!(!d.join("teacher/metrics.json").exists());
}

#[test]
fn stale_teacher_features_are_rejected() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200"]);
    ok(d, &["prep"]);
    ok(d, &[QUICK, &["train-teacher"]].concat());
    ok(d, &[QUICK, &["algorithm1"]].concat());
    ok(d, &[QUICK, &["--seed", "5", "train-teacher"]].concat());
    let o = latentg(d, &[QUICK, &["train-student"]].concat());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rerun `latentg algorithm1`"), "{}", stderr(&o));
}

#[test]
fn divergence_is_a_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200"]);
    ok(d, &["prep"]);
    let o = latentg(
        d,
        &["--set", "teacher.lr=1e6", "--set", "teacher.clip_norm=0", "--set", "teacher.epochs=3", "train-teacher"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn kfold_writes_a_summary() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200"]);
    ok(d, &["prep"]);
    ok(d, &[QUICK, &["kfold"]].concat());
    let s: serde_json::Value = serde_json::from_slice(&fs::read(d.join("kfold_summary.json")).unwrap()).unwrap();
    assert_eq!(s["k"], 2);
    assert_eq!(s["folds"].as_array().unwrap().len(), 2);
    assert!(s["student"]["accuracy"]["mean"].as_f64().unwrap() > 0.0);
}
