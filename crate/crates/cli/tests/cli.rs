//! End-to-end runs of the `certlab` binary on the synthetic dataset.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn certlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_certlab"))
        .args(args)
        .env_remove("CERTLAB_DATA")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = certlab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains a small synthetic network into `dir` with the given preset.
fn train(dir: &Path, preset: &str, extra: &[&str]) {
    let mut args = vec![
        "train", "--dataset", "synth", "--synth-n", "200", "--preset", preset, "--hidden", "8,8", "--seed", "5",
        "--set", "epochs=6", "--set", "warmup=1", "--set", "rampup=3", "--set", "batch_size=20", "--set",
        "lr=0.01", "--out", p(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn minimal_examples_pass() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["minimal-examples", "--out", p(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let report: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("minimal.json"))).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 2);
}

#[test]
fn curve_has_one_row_per_sample_starting_at_zero() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    train(&run, "desk-box", &["--set", "eps_train=0.05"]);
    let net = run.join("net.txt");
    ok(&[
        "curve", "--net", p(&net), "--dataset", "synth", "--split", "test", "--n", "40", "--eps-max", "0.1",
        "--samples", "5", "--out", p(tmp.path()),
    ]);
    let csv = read(&tmp.path().join("curve.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eps,certified"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[4][0] - 0.1).abs() < 1e-15);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]), "box curve must not increase");
    let auc: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("auc.json"))).unwrap();
    assert!(auc["auc"].as_f64().unwrap() >= 0.0);
}

#[test]
fn natural_training_then_zero_radius_certification_matches_accuracy() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    train(&run, "natural", &[]);
    for file in ["net.txt", "history.csv", "config.txt", "summary.json"] {
        assert!(run.join(file).is_file(), "missing {file}");
    }
    assert!(read(&run.join("config.txt")).contains("kappa_end = 1"));
    ok(&[
        "certify", "--net", p(&run.join("net.txt")), "--dataset", "synth", "--split", "test", "--n", "100", "--eps",
        "0", "--kinds", "box,deepz,crown,triangle", "--out", p(tmp.path()),
    ]);
    let report: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("report.json"))).unwrap();
    let acc = report["acc"].as_f64().unwrap();
    assert!(acc > 0.5, "natural training should learn the synthetic task, got {acc}");
    for (kind, cr) in report["cr"].as_object().unwrap() {
        assert_eq!(cr.as_f64().unwrap(), acc, "{kind}");
    }
}

#[test]
fn outputs_are_byte_identical_across_reruns_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let runs: Vec<_> = (0..2).map(|i| tmp.path().join(format!("r{i}"))).collect();
    for (i, run) in runs.iter().enumerate() {
        let threads = if i == 0 { "1" } else { "3" };
        train(run, "desk-box", &["--threads", threads, "--set", "eps_train=0.05"]);
        let net = run.join("net.txt");
        let data = ["--dataset", "synth", "--split", "test", "--n", "30"];
        let common = |cmd: &str, rest: &[&str]| {
            let mut a = vec![cmd, "--threads", threads];
            a.extend_from_slice(rest);
            a.extend_from_slice(&data);
            a.extend_from_slice(&["--out", p(run)]);
            ok(&a);
        };
        common("certify", &["--net", p(&net), "--eps", "0.05", "--kinds", "box,crown,parallelogram"]);
        common("curve", &["--net", p(&net), "--kind", "deepz", "--eps-max", "0.1", "--samples", "4"]);
        let labelled = format!("a={}", p(&net));
        common("cross", &["--net", &labelled, "--eps", "0.05", "--kinds", "box,hbox"]);
        common("sweep", &["--net", p(&net), "--eps", "0.1", "--points", "11", "--kinds", "box,deepz"]);
        ok(&["landscape", "--instances", "2", "--epochs", "5", "--seed", "9", "--out", p(run)]);
        ok(&["lp-check", "--cases", "5", "--seed", "2", "--threads", threads, "--out", p(run)]);
        ok(&["fetch-presets", "--out", p(&run.join("presets"))]);
    }
    let files = [
        "net.txt",
        "history.csv",
        "config.txt",
        "summary.json",
        "report.json",
        "curve.csv",
        "auc.json",
        "cross.csv",
        "sweep.csv",
        "landscape.csv",
        "landscape.json",
        "lp_check.json",
        "presets/lp-toy.cfg",
    ];
    for f in files {
        assert_eq!(read(&runs[0].join(f)), read(&runs[1].join(f)), "{f} differs between runs");
    }
}

#[test]
fn commands_leave_their_inputs_untouched() {
    let tmp = TempDir::new().unwrap();
    train(tmp.path(), "natural", &[]);
    let net = tmp.path().join("net.txt");
    let before = std::fs::read(&net).unwrap();
    ok(&[
        "certify", "--net", p(&net), "--dataset", "synth", "--n", "10", "--eps", "0.01", "--out",
        p(&tmp.path().join("c")),
    ]);
    assert_eq!(std::fs::read(&net).unwrap(), before);
}

#[test]
fn presets_round_trip_through_config_files() {
    let tmp = TempDir::new().unwrap();
    ok(&["fetch-presets", "--out", p(tmp.path())]);
    let run = tmp.path().join("run");
    ok(&[
        "train", "--dataset", "synth", "--synth-n", "40", "--config", p(&tmp.path().join("natural.cfg")), "--set",
        "epochs=1", "--set", "warmup=0", "--set", "rampup=0", "--out", p(&run),
    ]);
    let written = read(&run.join("config.txt"));
    assert!(written.contains("epochs = 1"));
    assert!(written.contains("kappa_end = 1"));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.txt");
    let cases: Vec<Vec<&str>> = vec![
        vec!["certify", "--frobnicate"],
        vec!["certify", "--net", p(&missing), "--dataset", "synth", "--eps", "0.1"],
        vec!["train", "--dataset", "synth", "--set", "kappa_end=2", "--out", p(tmp.path())],
        vec!["train", "--dataset", "synth", "--set", "no_such_key=1", "--out", p(tmp.path())],
        vec!["train", "--dataset", "synth", "--preset", "nope", "--out", p(tmp.path())],
        vec!["train", "--config", p(&missing), "--dataset", "synth", "--out", p(tmp.path())],
        vec!["curve", "--net", p(&missing), "--eps-max", "0.1"],
        vec!["certify", "--net", "x", "--eps", "0.1", "--kinds", "octagon"],
    ];
    for args in cases {
        let out = certlab(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn missing_mnist_directory_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = certlab(&["train", "--data-dir", p(&tmp.path().join("none")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lp_check_passes() {
    let tmp = TempDir::new().unwrap();
    ok(&["lp-check", "--cases", "10", "--out", p(tmp.path())]);
    let report: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("lp_check.json"))).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["cases"], 10);
}
