use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fsvm_core::experiment::{Classifier, CvReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fsvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsvm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two Gaussian-ish blobs in three features as LIBSVM text.
fn blobs(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n {
        let label = if i % 2 == 0 { 1 } else { -1 };
        let shift = 1.5 * label as f64;
        let f: Vec<f64> = (0..3)
            .map(|k| rng.random_range(-1.0..1.0) + if k == 0 { shift } else { 0.0 })
            .collect();
        let _ = writeln!(out, "{label:+} 1:{} 2:{} 3:{}", f[0], f[1], f[2]);
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "train.libsvm", &blobs(40, 1));
    let model = dir.path().join("m.json").to_string_lossy().into_owned();
    let o = fsvm(&[
        "train", "--data", &data, "--kind", "fsvm", "--C", "1", "--rho", "0.1", "--out", &model,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("training accuracy"));

    let text = fs::read_to_string(&model).unwrap();
    let clf = Classifier::from_json(&text).unwrap();
    assert_eq!(clf.to_json(), text, "model JSON is not value-exact");

    let preds = dir.path().join("p.txt").to_string_lossy().into_owned();
    let o = fsvm(&["predict", "--model", &model, "--data", &data, "--out", &preds]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("accuracy"));
    let labels: Vec<i64> = fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(labels.len(), 40);
    assert!(labels.iter().all(|&l| l == 1 || l == -1));
}

#[test]
fn predict_accepts_unlabelled_csv_and_short_sparse_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "train.libsvm", &blobs(30, 2));
    let model = dir.path().join("m.json").to_string_lossy().into_owned();
    let o = fsvm(&["train", "--data", &data, "--kind", "svm", "--C", "1", "--out", &model]);
    assert!(o.status.success());

    let points = write(dir.path(), "new.csv", "a,b,c\n2.0,0,0\n-2.0,0,0\n");
    let o = fsvm(&["predict", "--model", &model, "--data", &points]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "1\n-1\n");

    // Only the first feature mentioned: the rest are padded with zeros.
    let sparse = write(dir.path(), "short.libsvm", "+1 1:2.0\n-1 1:-2.0\n");
    let o = fsvm(&["predict", "--model", &model, "--data", &sparse]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "1\n-1\n");

    let wide = write(dir.path(), "wide.libsvm", "+1 7:1.0\n");
    assert_eq!(
        fsvm(&["predict", "--model", &model, "--data", &wide]).status.code(),
        Some(2)
    );
}

#[test]
fn grid_search_from_comma_lists() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "train.libsvm", &blobs(30, 3));
    let model = dir.path().join("m.json").to_string_lossy().into_owned();
    let o = fsvm(&[
        "train", "--data", &data, "--kind", "fsvm", "--C", "0.1,1", "--rho", "0.1", "--folds", "3", "--out", &model,
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("selected"));
}

#[test]
fn cv_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "toy.libsvm", &blobs(30, 4));
    let out = dir.path().join("reports");
    let o = fsvm(&[
        "cv",
        "--data",
        &data,
        "--kind",
        "kernel-svm",
        "--C",
        "1",
        "--gamma",
        "0.5",
        "--kpca-dim",
        "5",
        "--folds",
        "3",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let file = out.join("toy.kernel-svm.json");
    let report = CvReport::from_json(&fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert_eq!(report.config.seed, 9);
    assert_eq!(report.best.kpca_dim, Some(5));
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    assert!(value.get("format_version").is_some());
}

#[test]
fn config_file_supplies_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "toy.libsvm", &blobs(24, 5));
    let config = write(
        dir.path(),
        "cfg.json",
        r#"{"model": "svm", "c_grid": [2.0], "folds": 4}"#,
    );
    let out = dir.path().join("r");
    let o = fsvm(&[
        "cv",
        "--data",
        &data,
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = CvReport::from_json(&fs::read_to_string(out.join("toy.svm.json")).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 4);
    assert_eq!(report.best.c, 2.0);
}

#[test]
fn verify_bounds_reports_radius() {
    let dir = tempfile::tempdir().unwrap();
    let pts = write(dir.path(), "square.csv", "1,1\n1,-1\n-1,1\n-1,-1\n");
    let o = fsvm(&["verify-bounds", "--data", &pts]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["bounds"]["radius"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(v["bounds"]["all_hold"], true);
    assert_eq!(v["n_points"], 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.libsvm", "1 0:1.0\n");
    let o = fsvm(&["train", "--data", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.libsvm:1: index must be ≥ 1"));

    let one_class = write(dir.path(), "one.libsvm", "+1 1:1\n+1 1:2\n+1 1:3\n");
    assert_eq!(
        fsvm(&["train", "--data", &one_class, "--C", "1", "--rho", "0.1"])
            .status
            .code(),
        Some(3)
    );

    let missing = dir.path().join("nope.libsvm");
    assert_eq!(
        fsvm(&["cv", "--data", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(fsvm(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(fsvm(&["cv", "--data", &one_class, "--C", "-1"]).status.code(), Some(2));
}
