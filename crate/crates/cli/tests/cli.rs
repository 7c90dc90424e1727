//! End-to-end tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nnk-ood"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

/// Small separable benchmark written into `dir/data`.
fn synth_small(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    run_ok(&[
        "synth",
        "--out",
        &path_str(&data),
        "--id-clusters",
        "3",
        "--ood-clusters",
        "1",
        "--per-cluster",
        "60",
        "--dim",
        "8",
        "--seed",
        "7",
    ]);
    data
}

#[test]
fn full_pipeline_reaches_high_auroc() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let model = dir.path().join("nnk.model");
    let scores = dir.path().join("scores.csv");
    let metrics = dir.path().join("metrics.json");

    run_ok(&[
        "fit",
        "--method",
        "nnk",
        "--train",
        &path_str(&data.join("train.npy")),
        "--m-init",
        "16",
        "--k-sparsity",
        "5",
        "--out",
        &path_str(&model),
    ]);
    run_ok(&[
        "score",
        "--model",
        &path_str(&model),
        "--queries",
        &path_str(&data.join("test.npy")),
        "--out",
        &path_str(&scores),
    ]);
    run_ok(&[
        "eval",
        "--scores",
        &path_str(&scores),
        "--flags",
        &path_str(&data.join("test_is_ood.csv")),
        "--out",
        &path_str(&metrics),
        "--decisions",
        &path_str(&dir.path().join("decisions.csv")),
    ]);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(report["auroc"].as_f64().unwrap() >= 0.99);

    let decisions = std::fs::read_to_string(dir.path().join("decisions.csv")).unwrap();
    assert_eq!(decisions.lines().count(), 240);
    assert!(decisions.lines().all(|l| l == "ID" || l == "OOD"));
}

#[test]
fn synth_is_deterministic_across_runs() {
    let dir = tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "synth",
            "--out",
            &path_str(out),
            "--per-cluster",
            "30",
            "--dim",
            "4",
            "--seed",
            "11",
        ]);
    }
    for file in [
        "train.npy",
        "train_labels.csv",
        "test.npy",
        "test_is_ood.csv",
        "manifest.json",
    ] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert_eq!(x, y, "{file} differs between identical runs");
    }
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = bin().args(["synth"]).output().expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn label_aware_method_without_labels_is_config_error() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let out = bin()
        .args([
            "fit",
            "--method",
            "c-nnk",
            "--train",
            &path_str(&data.join("train.npy")),
            "--m-init",
            "8",
            "--out",
            &path_str(&dir.path().join("m.model")),
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels"));
}

#[test]
fn malformed_input_is_data_error() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2,3\n4,5\n").unwrap();
    let out = bin()
        .args([
            "fit",
            "--method",
            "knn",
            "--train",
            &path_str(&bad),
            "--out",
            &path_str(&dir.path().join("m.model")),
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_flipped_flags_complements_auroc() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let model = dir.path().join("knn.model");
    let scores = dir.path().join("scores.csv");
    run_ok(&[
        "fit",
        "--method",
        "knn",
        "--train",
        &path_str(&data.join("train.npy")),
        "--out",
        &path_str(&model),
    ]);
    run_ok(&[
        "score",
        "--model",
        &path_str(&model),
        "--queries",
        &path_str(&data.join("test.npy")),
        "--out",
        &path_str(&scores),
    ]);

    let flags_path = data.join("test_is_ood.csv");
    let flipped_path = dir.path().join("flipped.csv");
    let flipped: String = std::fs::read_to_string(&flags_path)
        .unwrap()
        .lines()
        .map(|l| if l.trim() == "0" { "1\n" } else { "0\n" })
        .collect();
    std::fs::write(&flipped_path, flipped).unwrap();

    let mut aurocs = Vec::new();
    for flags in [&flags_path, &flipped_path] {
        let metrics = dir.path().join("m.json");
        run_ok(&[
            "eval",
            "--scores",
            &path_str(&scores),
            "--flags",
            &path_str(flags),
            "--out",
            &path_str(&metrics),
        ]);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
        aurocs.push(report["auroc"].as_f64().unwrap());
    }
    assert!((aurocs[0] + aurocs[1] - 1.0).abs() <= 1e-9, "{aurocs:?}");
}

#[test]
fn sweep_marks_one_best_row_and_keeps_atoms_at_lambda_zero() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let out = dir.path().join("sweep.csv");
    run_ok(&[
        "sweep",
        "--method",
        "ec-nnk",
        "--train",
        &path_str(&data.join("train.npy")),
        "--queries",
        &path_str(&data.join("test.npy")),
        "--flags",
        &path_str(&data.join("test_is_ood.csv")),
        "--m-grid",
        "8,16",
        "--lambda-grid",
        "0,0.05",
        "--epochs",
        "6",
        "--out",
        &path_str(&out),
    ]);

    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let best_count = rows.iter().filter(|r| r.ends_with(",1")).count();
    assert_eq!(best_count, 1, "exactly one best row:\n{csv}");
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        let (m_init, lambda, final_m) = (fields[1], fields[2], fields[4]);
        if lambda == "0" {
            assert_eq!(m_init, final_m, "no pruning at lambda 0:\n{csv}");
        }
    }
}

#[test]
fn sweep_with_seeded_validation_split() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let out = dir.path().join("sweep.csv");
    run_ok(&[
        "sweep",
        "--method",
        "nnk",
        "--train",
        &path_str(&data.join("train.npy")),
        "--queries",
        &path_str(&data.join("test.npy")),
        "--flags",
        &path_str(&data.join("test_is_ood.csv")),
        "--val-frac",
        "0.5",
        "--split-seed",
        "3",
        "--m-grid",
        "4,8",
        "--epochs",
        "4",
        "--out",
        &path_str(&out),
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    // Plain method: the lambda grid collapses to zero.
    assert_eq!(csv.lines().skip(1).count(), 2);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")), "{csv}");
}

#[test]
fn bench_rejects_single_method_and_writes_per_seed_reports() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let out_dir = dir.path().join("bench");

    let base = [
        "bench",
        "--train",
        &path_str(&data.join("train.npy")),
        "--queries",
        &path_str(&data.join("test.npy")),
        "--flags",
        &path_str(&data.join("test_is_ood.csv")),
        "--m-init",
        "8",
        "--epochs",
        "4",
        "--out-dir",
        &path_str(&out_dir),
    ]
    .map(String::from);

    let single = bin()
        .args(base.iter().map(String::as_str))
        .args(["--methods", "nnk"])
        .output()
        .expect("binary runs");
    assert_eq!(single.status.code(), Some(3));

    let out = bin()
        .args(base.iter().map(String::as_str))
        .args(["--methods", "nnk,knn", "--seeds", "0,1", "--repeats", "3"])
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for name in ["nnk_seed0.json", "nnk_seed1.json", "knn_seed0.json", "knn_seed1.json"] {
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join(name)).unwrap()).unwrap();
        assert!(report["inference_seconds"].as_f64().unwrap() > 0.0, "{name}");
    }
    let aggregate: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("aggregate.json")).unwrap())
            .unwrap();
    assert_eq!(aggregate["nnk"]["n_seeds"], 2);
    assert_eq!(aggregate["knn"]["n_seeds"], 2);
}

#[test]
fn config_file_feeds_defaults_and_flags_win() {
    let dir = tempdir().unwrap();
    let data = synth_small(dir.path());
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{ "method": "kmeans", "m_init": 4, "epochs": 3 }"#,
    )
    .unwrap();

    // Method and m_init come from the file.
    let model = dir.path().join("from_file.model");
    run_ok(&[
        "fit",
        "--config",
        &path_str(&config),
        "--train",
        &path_str(&data.join("train.npy")),
        "--out",
        &path_str(&model),
    ]);

    // The flag overrides the file's m_init.
    let out = run_ok(&[
        "fit",
        "--config",
        &path_str(&config),
        "--m-init",
        "6",
        "--train",
        &path_str(&data.join("train.npy")),
        "--out",
        &path_str(&model),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("6 atoms"), "{stdout}");
}

#[test]
fn logits_pipeline_round_trips() {
    let dir = tempdir().unwrap();
    // Two confident ID rows, one near-uniform row.
    let logits = dir.path().join("logits.csv");
    std::fs::write(&logits, "5,0,0\n0,6,0\n0.2,0.1,0.0\n").unwrap();
    let train = dir.path().join("train.csv");
    std::fs::write(&train, "1,0\n0,1\n1,1\n").unwrap();

    let model = dir.path().join("msp.model");
    run_ok(&[
        "fit",
        "--method",
        "msp",
        "--train",
        &path_str(&train),
        "--train-logits",
        &path_str(&logits),
        "--out",
        &path_str(&model),
    ]);
    let scores = dir.path().join("scores.csv");
    run_ok(&[
        "score",
        "--model",
        &path_str(&model),
        "--query-logits",
        &path_str(&logits),
        "--out",
        &path_str(&scores),
    ]);
    let text = std::fs::read_to_string(&scores).unwrap();
    let values: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(values.len(), 3);
    // The near-uniform row is the most OOD under MSP.
    assert!(values[2] > values[0] && values[2] > values[1]);
}
