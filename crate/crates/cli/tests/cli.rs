use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn jlvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jlvae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn jlvae")
}

fn ok(args: &[&str]) {
    let out = jlvae(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The single JSON error object a failed run prints last on stderr.
fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("json error line");
    let v: Value = serde_json::from_str(line).unwrap();
    assert!(v["error"]["message"].is_string());
    v
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "preset": "plant_synth",
  "synth": {"n_samples": 1500, "latent_x": 2, "latent_c": 2, "dim_x": 6, "dim_c": 5,
            "noise_x": 0.05, "noise_c": 0.3, "cross_weight": 3.0,
            "anomaly_fraction": 0.02, "anomaly_shift": 0.0, "scaling": "standardize"},
  "train": {"max_epochs": 3},
  "eval": {"k_folds": 2, "lof_k": 10, "iforest_trees": 20},
  "robustness": {"n_rows": 200}
}"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, SMALL).unwrap();
    p
}

fn kdd_line(proto: &str, service: &str, bytes: u32, label: &str) -> String {
    let mut f: Vec<String> = vec![
        "0".into(),
        proto.into(),
        service.into(),
        "SF".into(),
        bytes.to_string(),
        "100".into(),
    ];
    f.extend((6..41).map(|i| ((i as u32 * bytes) % 7).to_string()));
    f.push(format!("{label}."));
    f.join(",")
}

fn kdd_sample(dir: &Path) -> PathBuf {
    let mut lines = Vec::new();
    for i in 0..40u32 {
        let proto = ["tcp", "udp", "icmp"][i as usize % 3];
        lines.push(kdd_line(proto, "http", 100 + i, "normal"));
    }
    for i in 0..4u32 {
        lines.push(kdd_line("tcp", "ftp", 9000 + i, "ipsweep"));
    }
    lines.push(kdd_line("icmp", "ecr_i", 1032, "smurf"));
    lines.push("not,a,record".into());
    let p = dir.join("kdd.csv");
    fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

#[test]
fn preprocess_counts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let input = kdd_sample(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["preprocess", "--input", s(&input), "--out", s(&a)]);
    ok(&["preprocess", "--input", s(&input), "--out", s(&b)]);
    for f in ["X.csv", "C.csv", "labels.csv", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let m = read_json(&a.join("run_manifest.json"));
    assert_eq!(m["command"], "preprocess");
    assert_eq!(m["metrics"]["rows"], 44);
    assert_eq!(m["metrics"]["anomalies"], 4);
    let dm = read_json(&a.join("manifest.json"));
    assert_eq!(dm["extra"]["malformed_lines"], 1);
    assert_eq!(dm["extra"]["dropped_per_label"]["smurf"], 1);
}

#[test]
fn empty_input_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "").unwrap();
    let out_dir = dir.path().join("out");
    let err = error_of(&jlvae(&[
        "preprocess",
        "--input",
        s(&input),
        "--out",
        s(&out_dir),
    ]));
    assert_eq!(err["error"]["command"], "preprocess");
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"train": {"max_epoch": 3}}"#).unwrap();
    let err = error_of(&jlvae(&[
        "synth",
        "--config",
        s(&p),
        "--out",
        s(&dir.path().join("o")),
    ]));
    let text = err.to_string();
    assert!(text.contains("max_epoch"), "{text}");
}

#[test]
fn missing_dataset_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = error_of(&jlvae(&[
        "train",
        "--data",
        "/nonexistent/data",
        "--out",
        s(dir.path()),
    ]));
    assert_eq!(err["error"]["command"], "train");
}

#[test]
fn synth_train_score_robustness_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let d = |n: &str| dir.path().join(n);
    ok(&["synth", "--config", s(&cfg), "--out", s(&d("data"))]);
    assert!(d("data/train/X.csv").exists() && d("data/test/labels.csv").exists());

    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&d("data/train")),
        "--out",
        s(&d("model")),
    ]);
    let history = fs::read_to_string(d("model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let ck = d("model/checkpoint.json");

    for run in ["s1", "s2"] {
        ok(&[
            "score",
            "--config",
            s(&cfg),
            "--checkpoint",
            s(&ck),
            "--data",
            s(&d("data/test")),
            "--method",
            "recon_probability",
            "--samples",
            "3",
            "--target-rate",
            "0.05",
            "--out",
            s(&d(run)),
        ]);
    }
    assert_eq!(
        fs::read(d("s1/scores.csv")).unwrap(),
        fs::read(d("s2/scores.csv")).unwrap()
    );
    let m = read_json(&d("s1/run_manifest.json"));
    assert!(m["metrics"]["summary"]["roc_auc"].is_number());
    assert_eq!(m["inputs"][0]["rows"], 300);

    ok(&[
        "robustness",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ck),
        "--data",
        s(&d("data/test")),
        "--out",
        s(&d("rob")),
    ]);
    let table = fs::read_to_string(d("rob/robustness_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 16);

    // a checkpoint cannot score data of another width
    let other = dir.path().join("other.json");
    fs::write(&other, SMALL.replace("\"dim_c\": 5", "\"dim_c\": 4")).unwrap();
    ok(&["synth", "--config", s(&other), "--out", s(&d("narrow"))]);
    let err = error_of(&jlvae(&[
        "score",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&d("narrow/test")),
        "--out",
        s(&d("s3")),
    ]));
    assert_eq!(err["error"]["command"], "score");
}

#[test]
fn eval_reports_every_method_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--data",
        s(&data.join("train")),
        "--out",
        s(&out),
    ]);
    let r = read_json(&out.join("eval_report.json"));
    assert_eq!(r["source"], "prepared");
    assert_eq!(r["folds"].as_array().unwrap().len(), 2);
    for m in [
        "jlvae_recon_error",
        "jlvae_recon_probability",
        "iforest",
        "lof",
    ] {
        let roc = r["mean"][m]["roc_auc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&roc), "{m}: {roc}");
    }
}

#[test]
fn eval_on_raw_kdd_refits_preprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let input = kdd_sample(dir.path());
    let cfg = dir.path().join("kdd.json");
    fs::write(
        &cfg,
        r#"{"train": {"max_epochs": 2}, "eval": {"k_folds": 2, "lof_k": 5, "iforest_trees": 10}}"#,
    )
    .unwrap();
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--preset",
        "kdd99",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--out",
        s(&out),
    ]);
    let r = read_json(&out.join("eval_report.json"));
    assert_eq!(
        (
            r["source"].as_str(),
            r["rows"].as_u64(),
            r["anomalies"].as_u64()
        ),
        (Some("raw"), Some(44), Some(4))
    );
}
