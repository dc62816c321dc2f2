use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qtrain::data::{encode_idx_images, encode_idx_labels, Dataset, Split};
use qtrain::netgraph::Shape;
use qtrain::rng::SeededRng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qtrain"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn synthetic(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = SeededRng::new(seed, 3);
    let shape = Shape::new(1, 28, 28);
    let mut pixels = Vec::with_capacity(n * shape.len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 10;
        for p in 0..shape.len() {
            let row = p / 28;
            let lit = row / 3 == label;
            pixels.push(if lit { 200 + rng.below(50) as u8 } else { rng.below(30) as u8 });
        }
        labels.push(label as u8);
    }
    Dataset::new(shape, pixels, labels, split, 10).unwrap()
}

fn data_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (ds, prefix) in [
        (synthetic(60, 1, Split::Train), "train"),
        (synthetic(40, 2, Split::Test), "t10k"),
    ] {
        fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), encode_idx_images(&ds)).unwrap();
        fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte")), encode_idx_labels(&ds)).unwrap();
    }
    dir
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data-dir", p(data), "--out", p(out), "--iterations", "5", "--batch", "4"];
    args.extend_from_slice(extra);
    run(&args)
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn train_writes_artifacts() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let o = train(data.path(), out.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["loss.csv", "accuracy.csv", "summary.json", "weights.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let loss = fs::read_to_string(out.path().join("loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,loss\n"));
    assert_eq!(loss.lines().count(), 6);
    let s = summary(out.path());
    assert_eq!(s["mode"], "quantized");
    assert_eq!(s["seed"], 42);
    assert_eq!(s["iterations"], 5);
}

#[test]
fn float_flag_switches_mode() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let o = train(data.path(), out.path(), &["--float"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(summary(out.path())["mode"], "float");
}

#[test]
fn zero_iterations_is_untrained() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data-dir", p(data.path()), "--out", p(out.path()), "--iterations", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let acc = summary(out.path())["final_accuracy"].as_f64().unwrap();
    assert!((5.0..=20.0).contains(&acc), "{acc}");
    assert_eq!(fs::read_to_string(out.path().join("loss.csv")).unwrap(), "iteration,loss\n");
}

#[test]
fn missing_labels_exit_2_and_name_the_path() {
    let data = data_dir();
    let missing = data.path().join("train-labels-idx1-ubyte");
    fs::remove_file(&missing).unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = train(data.path(), out.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(p(&missing)), "{err}");
}

#[test]
fn config_errors_exit_1() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let o = train(data.path(), out.path(), &["--format", "(2,12),(2,12)"]);
    assert_eq!(o.status.code(), Some(1));
    let o = train(data.path(), out.path(), &["--format", "(2,x)"]);
    assert_eq!(o.status.code(), Some(1));
    let o = train(data.path(), out.path(), &["--alpha", "-1"]);
    assert_eq!(o.status.code(), Some(1));

    let bad = out.path().join("bad.json");
    fs::write(&bad, "{\"layers\": 3}").unwrap();
    let o = train(data.path(), out.path(), &["--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_round_trips() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("net.json");
    fs::write(&cfg, qtrain::netgraph::lenet_preset(qtrain::netgraph::DatasetKind::Mnist).to_json()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(train(data.path(), a.path(), &["--config", p(&cfg)]).status.code(), Some(0));
    assert_eq!(train(data.path(), b.path(), &[]).status.code(), Some(0));
    assert_eq!(
        fs::read(a.path().join("loss.csv")).unwrap(),
        fs::read(b.path().join("loss.csv")).unwrap()
    );
}

#[test]
fn eval_reproduces_training_accuracy() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data-dir", p(data.path()), "--out", p(out.path()), "--iterations", "20", "--batch", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let acc = summary(out.path())["final_accuracy"].as_f64().unwrap();
    let weights = out.path().join("weights.json");
    let o = run(&["eval", "--data-dir", p(data.path()), "--weights", p(&weights)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains(&format!("{acc:.2}%")), "{text} vs {acc}");

    let o = run(&["eval", "--data-dir", p(data.path()), "--weights", "/nonexistent/weights.json"]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_sweep(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("sweep.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn single_point_sweep_matches_train() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let spec = write_sweep(
        out.path(),
        r#"{"candidates": [["(2,12)"],["(2,12)"],["(2,12)"],["(1,12)"],["(3,10)"]], "iterations": 5, "batch_size": 4, "threshold": 0}"#,
    );
    let sweep_out = out.path().join("s");
    let o = run(&["sweep", "--sweep", p(&spec), "--data-dir", p(data.path()), "--out", p(&sweep_out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    let line = csv.lines().nth(1).unwrap();
    let (head, rest) = line.split_once(",\"").unwrap();
    let (formats, tail) = rest.split_once("\",").unwrap();
    let mut row = vec![head, formats];
    row.extend(tail.split(','));
    assert_eq!(row[1], "(2,12);(2,12);(2,12);(1,12);(3,10)");
    assert_eq!(row[4], "true");

    let train_out = out.path().join("t");
    assert_eq!(train(data.path(), &train_out, &[]).status.code(), Some(0));
    let s = summary(&train_out);
    assert_eq!(row[2].parse::<f64>().unwrap(), s["final_loss"].as_f64().unwrap());
    assert_eq!(row[3].parse::<f64>().unwrap(), s["final_accuracy"].as_f64().unwrap());
}

#[test]
fn sweep_orders_points_and_rejects_empty() {
    let data = data_dir();
    let out = tempfile::tempdir().unwrap();
    let spec = write_sweep(
        out.path(),
        r#"{"candidates": [["(2,12)","(2,6)"],["(2,12)","(2,6)"],["(2,12)","(2,6)"],["(1,12)","(1,6)"],["(3,10)","(3,6)"]], "iterations": 3, "batch_size": 4}"#,
    );
    let o = run(&["sweep", "--sweep", p(&spec), "--data-dir", p(data.path()), "--out", p(out.path())]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("1,\"(2,6);"));

    let empty = write_sweep(out.path(), r#"{"candidates": [[],[],[],[],[]], "iterations": 3}"#);
    let o = run(&["sweep", "--sweep", p(&empty), "--data-dir", p(data.path()), "--out", p(out.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn timing_report_for_preset() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["timing", "--dataset", "mnist", "--out", p(out.path())]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("timing.json")).unwrap()).unwrap();
    assert_eq!(report["layers"][0]["name"], "conv1");
    assert_eq!(report["layers"][0]["closed_form"], 2645);
    assert_eq!(report["dense_tail"]["closed_form"], 224);
    for row in report["layers"].as_array().unwrap() {
        assert_eq!(row["closed_form"], row["simulated"]);
    }
    assert_eq!(report["bp"]["closed_form"], report["bp"]["simulated"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), fs::read_to_string(out.path().join("timing.json")).unwrap());
}

#[test]
fn rerun_is_byte_identical() {
    let data = data_dir();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(data.path(), a.path(), &["--eval-every", "2"]);
    train(data.path(), b.path(), &["--eval-every", "2"]);
    for f in ["loss.csv", "accuracy.csv", "summary.json", "weights.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
