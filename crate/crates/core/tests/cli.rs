//! End-to-end checks of the `ltlab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ltlab::etf::make_nc_fixture;
use serde_json::Value;

fn ltlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltlab")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn weights_match_hand_computed_values() {
    let v = stdout_json(&ltlab(&["weights", "--losses", "1,3", "--alpha", "0"]));
    let w: Vec<f64> = v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(v["mean_loss"].as_f64(), Some(2.0));
    assert!(close(w[0], 2.0, 1e-15) && close(w[1], 2.0 / 3.0, 1e-15), "{w:?}");

    let v = stdout_json(&ltlab(&["weights", "--losses", "2", "--alpha", "0.1", "--w0", "1"]));
    assert!(close(v["weights"][0].as_f64().unwrap(), (2.0 * 2.0 + 0.1) / 4.1, 1e-15));

    let v = stdout_json(&ltlab(&["weights", "--losses", "1,1"]));
    assert_eq!(v["weights"], serde_json::json!([1.0, 1.0]));
}

#[test]
fn weights_reject_negative_loss() {
    let out = ltlab(&["weights", "--losses", "1,-2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("-2"));
}

#[test]
fn mlf_reports_value_branch_and_gap() {
    let out = ltlab(&["mlf", "--a", "0.5", "--z", "0"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().next(), Some("1 (series)"));

    let out = ltlab(&["mlf", "--a", "0.5", "--z", "4"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let value: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!(close(value, 1.0 / (4.0 * std::f64::consts::PI.sqrt()), 1e-12), "{text}");
    assert!(text.contains("(tail)"));

    // At a = 1 the tail is zero while the series gives e^{-1}; both are shown.
    let out = ltlab(&["mlf", "--a", "1", "--z", "1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let series: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("series: "))
        .expect("series line")
        .parse()
        .unwrap();
    assert!(close(series, (-1f64).exp(), 1e-6), "{text}");

    assert_eq!(ltlab(&["mlf", "--a", "1.5", "--z", "1"]).status.code(), Some(2));
}

fn write_fixture(dir: &Path) {
    let (c, p) = (4, 6);
    let mu = vec![0.3, -0.2, 0.1, 0.0, 0.5, -0.4];
    let fx = make_nc_fixture(c, p, 3, 1.5, 2.0, &mu, 11).unwrap();
    let header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let mut feats = format!("{},label\n", header.join(","));
    for (y, rows) in fx.features.iter().enumerate() {
        for h in rows {
            let cells: Vec<String> = h.iter().map(|v| format!("{v:e}")).collect();
            feats += &format!("{},{y}\n", cells.join(","));
        }
    }
    fs::write(dir.join("features.csv"), feats).unwrap();
    let mut clf = format!("{},bias\n", header.join(","));
    for k in 0..c {
        let cells: Vec<String> = fx.classifier.row(k).iter().map(|v| format!("{v:e}")).collect();
        clf += &format!("{},0\n", cells.join(","));
    }
    fs::write(dir.join("classifier.csv"), clf).unwrap();
}

#[test]
fn nc_eval_on_collapsed_dump() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let f = dir.path().join("features.csv");
    let w = dir.path().join("classifier.csv");
    let v = stdout_json(&ltlab(&[
        "nc-eval",
        "--features",
        f.to_str().unwrap(),
        "--classifier",
        w.to_str().unwrap(),
        "--losses",
        "0.2,0.2,0.2,0.2",
    ]));
    for k in ["nc1", "nc2", "nc3"] {
        assert!(v[k].as_f64().unwrap() <= 1e-9, "{k} = {}", v[k]);
    }
    assert_eq!(v["nc4"].as_f64(), Some(1.0));
    assert_eq!(v["rho"].as_f64(), Some(0.0));

    let without = stdout_json(&ltlab(&["nc-eval", "--features", f.to_str().unwrap(), "--classifier", w.to_str().unwrap()]));
    assert!(without.get("rho").is_none());
}

#[test]
fn nc_eval_missing_classifier_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let missing = dir.path().join("nope.csv");
    let out = ltlab(&[
        "nc-eval",
        "--features",
        dir.path().join("features.csv").to_str().unwrap(),
        "--classifier",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn gen_writes_manifest_consistent_with_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[dataset]\nn_max = 60\nimbalance_factor = 10\ninput_dim = 4\ntest_per_class = 5\n").unwrap();
    let out = ltlab(&["gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("data").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/manifest.json")).unwrap()).unwrap();
    let counts: Vec<u64> = manifest["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    // n_c = round(60 · 10^{-c/9}).
    let expected: Vec<u64> = (0..10).map(|c| (60.0 * 10f64.powf(-(c as f64) / 9.0)).round() as u64).collect();
    assert_eq!(counts, expected);

    let mut tally = vec![0u64; 10];
    let mut reader = csv::Reader::from_path(dir.path().join("data/train.csv")).unwrap();
    let label_col = reader.headers().unwrap().iter().position(|h| h == "label").unwrap();
    for rec in reader.records() {
        tally[rec.unwrap()[label_col].parse::<usize>().unwrap()] += 1;
    }
    assert_eq!(tally, counts);
}

#[test]
fn train_writes_artifacts_and_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        "[dataset]\nn_max = 40\nimbalance_factor = 10\ninput_dim = 8\ntest_per_class = 10\n[train]\nepochs = 3\nbatch_size = 16\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let args = |method: &str| {
        vec![
            "train".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
            "--seed".into(),
            "1".into(),
            "--seed".into(),
            "2".into(),
            "--method".into(),
            method.into(),
        ]
    };
    let run = |method: &str| Command::new(env!("CARGO_BIN_EXE_ltlab")).args(args(method)).output().unwrap();

    let agg = stdout_json(&run("ce"));
    assert!(agg["bal_acc_mean"].as_f64().unwrap().is_finite());
    for s in [1, 2] {
        let summary: Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join(format!("seed_{s}/summary.json"))).unwrap()).unwrap();
        for k in ["bal_acc", "rho", "nc1", "nc2", "nc3"] {
            assert!(summary[k].as_f64().unwrap().is_finite(), "{k}");
        }
        let metrics = fs::read_to_string(out_dir.join(format!("seed_{s}/metrics.csv"))).unwrap();
        assert_eq!(metrics.lines().count(), 4);
    }

    let bad = run("svm");
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("inverse") && err.contains("focal"), "{err}");
}
