use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use softkin::models::{ModelDocument, Regressor};
use softkin::pipeline::{Report, Selection};

const SMALL: &str = r#"
seed = 11
alpha = 0.1

[quantile]
n_trees = 60

[data]
source = "synthetic"

[data.sizes]
train = 300
calibration = 200
test = 150
extrapolation = 150

[[models]]
id = "lr"
kind = "linear"

[[models]]
id = "lasso"
kind = "lasso"
lambda = 0.5

[[models]]
id = "rf"
kind = "forest"
n_trees = 30

[[models]]
id = "gb"
kind = "boosted"
n_trees = 120
"#;

fn softkin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softkin"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), SMALL).unwrap();
    tmp
}

#[test]
fn stepwise_commands_produce_declared_files() {
    let tmp = setup();
    let dir = tmp.path();
    for cmd in ["generate", "train", "conformal", "evaluate", "report"] {
        let o = softkin(&[cmd, "--config", "run.toml", "--out", "out"], dir);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.join("out");
    for f in [
        "config.toml",
        "data/train.csv",
        "data/calibration.csv",
        "data/test.csv",
        "data/extrapolation.csv",
        "data/manifest.json",
        "models/lr.json",
        "models/lasso.json",
        "models/rf.json",
        "models/gb.json",
        "metrics/point_metrics.json",
        "metrics/point_metrics.csv",
        "selection.json",
        "conformal/summary.json",
        "conformal/comparison.csv",
        "conformal/scp_test_intervals.csv",
        "conformal/cqr_extrapolation_intervals.csv",
        "evaluation.json",
        "report/report.json",
        "report/table_point_metrics.csv",
        "report/table_intervals.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: Report = serde_json::from_str(&fs::read_to_string(out.join("report/report.json")).unwrap()).unwrap();
    for f in &report.files {
        assert!(out.join(f).is_file(), "report lists missing file {f}");
    }
}

#[test]
fn selection_prefers_ensembles_and_records_double_use() {
    let tmp = setup();
    let o = softkin(&["run", "--config", "run.toml", "--out", "out"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sel: Selection =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/selection.json")).unwrap()).unwrap();
    assert!(sel.best == "gb" || sel.best == "rf", "best = {}", sel.best);
    let by_test = sel
        .ranking
        .iter()
        .min_by(|a, b| a.test_value.unwrap().total_cmp(&b.test_value.unwrap()))
        .unwrap();
    assert_ne!(by_test.id, "lasso");
    assert!(by_test.id == "gb" || by_test.id == "rf");
    assert!(sel.notes.iter().any(|n| n.contains("calibration split ranks the pool")));
    assert_eq!(sel.split, "calibration");
}

#[test]
fn comparison_table_has_interval_columns_for_each_method() {
    let tmp = setup();
    assert_eq!(code(&softkin(&["run", "--config", "run.toml", "--out", "out"], tmp.path())), 0);
    let text = fs::read_to_string(tmp.path().join("out/report/table_intervals.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"coverage") && header.contains(&"winkler"));
    let cov = header.iter().position(|h| *h == "coverage").unwrap();
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    for m in ["QR", "CQR", "SCP"] {
        assert!(methods.contains(&m), "{m} missing");
    }
    for l in text.lines().skip(1) {
        let v: f64 = l.split(',').nth(cov).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn saved_model_reproduces_training_predictions() {
    let tmp = setup();
    assert_eq!(code(&softkin(&["run", "--config", "run.toml", "--out", "out"], tmp.path())), 0);
    let sel: Selection =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/selection.json")).unwrap()).unwrap();
    let doc = ModelDocument::load(tmp.path().join(format!("out/models/{}.json", sel.best))).unwrap();
    assert!(doc.calibrator.is_some());
    let reloaded = ModelDocument::from_json(&doc.to_json().unwrap()).unwrap();
    let u = [0.4, -0.3];
    assert_eq!(doc.model.predict(&u).unwrap(), reloaded.model.predict(&u).unwrap());
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = setup();
    let dir = tmp.path();
    assert_eq!(code(&softkin(&["generate", "--alpha", "1.5", "--out", "out"], dir)), 1);
    assert_eq!(code(&softkin(&["generate", "--config", "absent.toml"], dir)), 1);
    assert_eq!(code(&softkin(&["train", "--models", "svm", "--out", "out"], dir)), 1);
    assert_eq!(code(&softkin(&["bogus"], dir)), 1);

    let o = softkin(&["report", "--out", "empty"], dir);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("selection.json"));

    fs::write(dir.join("bad.csv"), "u1,x1\n1,2\n3,oops\n").unwrap();
    fs::write(
        dir.join("csv.toml"),
        "[data]\nsource = \"csv_single\"\npath = \"bad.csv\"\nn_inputs = 1\nfractions = { train = 0.5, calibration = 0.5, test = 0.0, extrapolation = 0.0 }\n",
    )
    .unwrap();
    let o = softkin(&["generate", "--config", "csv.toml", "--out", "out"], dir);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));

    // one calibration sample cannot bound a 10% interval, which warns but succeeds
    let tiny = SMALL.replace("calibration = 200", "calibration = 1");
    fs::write(dir.join("tiny.toml"), tiny).unwrap();
    for cmd in ["generate", "train"] {
        assert_eq!(code(&softkin(&[cmd, "--config", "tiny.toml", "--out", "tiny", "--models", "lr"], dir)), 0);
    }
    let o = softkin(&["conformal", "--config", "tiny.toml", "--out", "tiny", "--models", "lr"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("unbounded"));
}

#[test]
fn explicit_model_can_be_calibrated() {
    let tmp = setup();
    let dir = tmp.path();
    for cmd in ["generate", "train"] {
        assert_eq!(code(&softkin(&[cmd, "--config", "run.toml", "--out", "out"], dir)), 0);
    }
    let o = softkin(&["conformal", "--config", "run.toml", "--out", "out", "--model", "lr"], dir);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("calibrated lr"));
    let o = softkin(&["conformal", "--config", "run.toml", "--out", "out", "--model", "nope"], dir);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_flag_changes_data_and_same_seed_reproduces_it() {
    let tmp = setup();
    let dir = tmp.path();
    let gen = |out: &str, seed: &str| {
        assert_eq!(code(&softkin(&["generate", "--config", "run.toml", "--out", out, "--seed", seed], dir)), 0);
        fs::read(dir.join(out).join("data/train.csv")).unwrap()
    };
    let a = gen("a", "1");
    let b = gen("b", "1");
    let c = gen("c", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
