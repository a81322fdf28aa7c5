use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use sqfa::toy::max_principal_angle;
use sqfa::trainer::FilterRecord;
use sqfa::LabeledDataset;

fn sqfa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqfa"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = sqfa(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn toygen_writes_dataset_truth_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toygen", "--name", "toy6d", "--samples", "500", "--seed", "1", "--out", "d.csv"]);
    let data = LabeledDataset::load_csv(d.join("d.csv")).unwrap();
    assert_eq!((data.len(), data.dim(), data.num_classes()), (1500, 6, 3));
    let truth = json(&d.join("d.truth.json"));
    assert_eq!(truth["subspaces"][0]["dims"], serde_json::json!([0, 1]));
    let manifest = json(&d.join("d.csv.manifest.json"));
    assert_eq!(manifest["command"], "toygen");
    assert_eq!(manifest["flags"]["samples"], 500);
    assert!(d.join("d.truth.json.manifest.json").exists());

    ok(d, &["toygen", "--name", "toy6d", "--samples", "500", "--seed", "1", "--out", "again.csv"]);
    assert_eq!(fs::read(d.join("d.csv")).unwrap(), fs::read(d.join("again.csv")).unwrap());
    assert!(fs::read_dir(d).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sqfa(d, &["toygen", "--name", "toy9d", "--samples", "5", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("toy6d") && err.contains("toy4d") && err.contains("covcode"), "{err}");

    ok(d, &["toygen", "--name", "toy4d", "--samples", "50", "--out", "d.csv"]);
    let out = sqfa(d, &["fit", "--data", "d.csv", "--method", "lda", "--m", "3", "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("f.json").exists());
    assert_eq!(sqfa(d, &["fit", "--data", "d.csv", "--method", "sqfa", "--m", "9", "--out", "f.json"]).status.code(), Some(2));
    assert_eq!(sqfa(d, &[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(sqfa(d, &["stats", "--data", "missing.csv", "--out", "s.json"]).status.code(), Some(1));
    ok(d, &["toygen", "--name", "toy4d", "--samples", "5", "--out", "d.csv"]);
    ok(d, &["fit", "--data", "d.csv", "--method", "pca", "--m", "2", "--out", "f.json"]);
    let out = sqfa(d, &["eval", "--train", "d.csv", "--filters", "f.json", "--classifier", "knn", "--k", "100", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fewer than k"));
}

#[test]
fn fit_sqfa_recovers_toy6d_covariance_plane_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toygen", "--name", "toy6d", "--samples", "2000", "--out", "d.csv"]);
    ok(d, &["fit", "--data", "d.csv", "--method", "sqfa", "--m", "2", "--restarts", "20", "--out", "f.json"]);
    let rec = FilterRecord::load(d.join("f.json")).unwrap();
    assert_eq!((rec.n, rec.m, rec.kind.as_str()), (6, 2, "fisher_rao_calvo_oller"));
    let plane = DMatrix::from_fn(6, 2, |i, j| (i == j) as u8 as f64);
    assert!(max_principal_angle(rec.bank().unwrap().as_matrix(), &plane).to_degrees() < 5.0);

    let log = fs::read_to_string(d.join("f.log.jsonl")).unwrap();
    let events: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events.iter().filter(|e| e["event"] == "restart").count(), 20);
    assert!(events.iter().filter(|e| e["event"] == "restart").all(|e| e["objective"].is_f64()));
    assert_eq!(events.last().unwrap()["event"], "final");

    let filters = fs::read(d.join("f.json")).unwrap();
    fs::remove_file(d.join("f.json")).unwrap();
    fs::remove_file(d.join("f.log.jsonl")).unwrap();
    ok(d, &["--manifest", "f.json.manifest.json"]);
    assert_eq!(fs::read(d.join("f.json")).unwrap(), filters);
    assert_eq!(fs::read_to_string(d.join("f.log.jsonl")).unwrap(), log);
}

#[test]
fn every_method_writes_filters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toygen", "--name", "toy4d", "--samples", "100", "--out", "d.csv"]);
    for (method, kind) in [
        ("smsqfa", "fisher_rao_zero_mean"),
        ("sqfa-b", "bhattacharyya"),
        ("sqfa-h", "hellinger"),
        ("pca", "pca"),
        ("lda", "lda"),
        ("ama", "ama"),
    ] {
        let out = format!("{method}.json");
        ok(d, &["fit", "--data", "d.csv", "--method", method, "--m", "2", "--restarts", "3", "--out", &out]);
        let rec = FilterRecord::load(d.join(&out)).unwrap();
        assert_eq!(rec.kind, kind);
        rec.bank().unwrap();
    }
    ok(d, &["fit", "--data", "d.csv", "--method", "sqfa", "--m", "4", "--pairs", "--restarts", "2", "--out", "p.json"]);
    assert_eq!(FilterRecord::load(d.join("p.json")).unwrap().m, 4);
}

#[test]
fn eval_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows: Vec<(usize, DVector<f64>)> = (0..90)
        .map(|i| {
            let k = i % 3;
            let jitter = (i as f64 * 0.37).sin() * 0.1;
            (k, DVector::from_column_slice(&[10.0 * k as f64 + jitter, jitter * 0.5, -jitter]))
        })
        .collect();
    LabeledDataset::from_rows(3, 3, &rows).unwrap().save_csv(d.join("sep.csv")).unwrap();
    ok(d, &["fit", "--data", "sep.csv", "--method", "pca", "--m", "2", "--out", "f.json"]);
    ok(d, &["eval", "--train", "sep.csv", "--filters", "f.json", "--seed", "4", "--out", "e.json"]);
    let m = json(&d.join("e.json"));
    assert!(m["accuracy"].as_f64().unwrap() >= 0.99);
    assert_eq!(m["classifier"], "qda");
    assert_eq!(m["n_test"], 90);
    assert_eq!(m["seed"], 4);
    let confusion = m["confusion"].as_array().unwrap();
    assert_eq!(confusion.len(), 3);
    assert!(confusion.iter().all(|r| r.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>() == 30));

    ok(d, &["eval", "--train", "sep.csv", "--test", "sep.csv", "--filters", "f.json", "--classifier", "knn", "--out", "k.json"]);
    assert_eq!(json(&d.join("k.json"))["classifier"], "knn3");
    ok(d, &["eval", "--train", "sep.csv", "--filters", "f.json", "--gaussian-resample", "--out", "g.json"]);
    assert!(json(&d.join("g.json"))["accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn distances_and_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toygen", "--name", "toy6d", "--samples", "200", "--out", "d.csv"]);
    ok(d, &["stats", "--data", "d.csv", "--out", "s.json"]);
    ok(d, &["distances", "--stats", "s.json", "--metric", "hellinger", "--out", "h.csv"]);
    let h = csv_column(&d.join("h.csv"), "distance");
    assert_eq!(h.len(), 3);
    assert!(h.iter().all(|v| (0.0..1.0).contains(v)));

    ok(d, &["sweep", "--name", "bayes1d", "--samples", "1000", "--out", "b.csv"]);
    let l = csv_column(&d.join("b.csv"), "log10_sigma2");
    let dfr = csv_column(&d.join("b.csv"), "d_fr");
    for (l, v) in l.iter().zip(&dfr) {
        assert!((v - (l * 10f64.ln()).abs() / 2f64.sqrt()).abs() < 1e-12);
    }

    ok(d, &["sweep", "--name", "co_gap_equalcov", "--out", "g.csv"]);
    let exact = csv_column(&d.join("g.csv"), "exact_fr");
    let bound = csv_column(&d.join("g.csv"), "calvo_oller");
    assert!(exact.iter().zip(&bound).all(|(e, b)| b <= &(e + 1e-12)));

    assert_eq!(sqfa(d, &["sweep", "--name", "co_gap_dataset", "--out", "x.csv"]).status.code(), Some(2));
    ok(d, &["sweep", "--name", "co_gap_dataset", "--stats", "s.json", "--out", "x.csv"]);
    assert_eq!(csv_column(&d.join("x.csv"), "calvo_oller").len(), 3);
}
