use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vinecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinecast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vinecast(args);
    assert!(out.status.success(), "vinecast {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small dataset written by `synth-data`.
fn small_data(dir: &TempDir, rows: usize, features: usize) -> PathBuf {
    let path = dir.path().join("data.csv");
    ok(&["synth-data", "--seed", "3", "--rows", &rows.to_string(), "--features", &features.to_string(), "--out", s(&path)]);
    path
}

#[test]
fn synth_data_has_the_default_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ok(&["synth-data", "--seed", "0", "--out", s(&path)]);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let features = header.iter().filter(|h| !h.starts_with("disease:") && **h != "block_id").count();
    assert_eq!(features, 450);
    assert_eq!(lines.count(), 1335);
}

#[test]
fn synth_data_honours_row_count_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["synth-data", "--seed", "1", "--rows", "10", "--features", "12", "--out", s(&a)]);
    ok(&["synth-data", "--seed", "1", "--rows", "10", "--features", "12", "--out", s(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn zero_training_steps_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vinecast(&["prior-train", "--steps", "0", "--out", s(&dir.path().join("w.pfnw"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("w.pfnw").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[pfn.training]\nstepz = 3\n").unwrap();
    let out = vinecast(&["--config", s(&config), "prior-train", "--out", s(&dir.path().join("w.pfnw"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn trained_weights_drive_predict() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(
        &config,
        "[prior]\nn_samples = [16, 32]\nn_features = [1, 5]\nn_classes_max = 2\n\n\
         [pfn.architecture]\nn_layers = 1\nemb_dim = 8\nn_heads = 2\nff_dim = 16\nmax_features = 6\nmax_classes = 2\n",
    )
    .unwrap();
    let weights = dir.path().join("w.pfnw");
    ok(&["--config", s(&config), "prior-train", "--steps", "5", "--out", s(&weights)]);
    let data = small_data(&dir, 60, 5);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&[
            "predict",
            "--data",
            s(&data),
            "--query",
            s(&data),
            "--weights",
            s(&weights),
            "--ensembles",
            "2",
            "--top-k",
            "0",
            "--out",
            s(out),
        ]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let probs: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), 60);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn predict_rejects_queries_missing_a_feature() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir, 40, 4);
    let query = dir.path().join("q.csv");
    std::fs::write(&query, "spectral_000\n0.5\n").unwrap();
    let out = vinecast(&[
        "predict",
        "--data",
        s(&data),
        "--query",
        s(&query),
        "--top-k",
        "0",
        "--ensembles",
        "1",
        "--out",
        s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_seed_benchmark_writes_the_table_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir, 160, 20);
    let (report, roc) = (dir.path().join("r.json"), dir.path().join("roc"));
    ok(&["benchmark", "--data", s(&data), "--seeds", "1", "--top-k", "6", "--out", s(&report), "--roc-dir", s(&roc)]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    for row in &rows {
        assert_eq!(row["n_seeds"], 1);
        for key in ["accuracy_std", "balanced_accuracy_std", "f1_std"] {
            assert_eq!(row[key].as_f64(), Some(0.0), "{key} of {row}");
        }
    }
    let auc = std::fs::read_to_string(roc.join("auc.csv")).unwrap();
    assert_eq!(auc.lines().count(), 11);
    let svg = std::fs::read_to_string(roc.join("roc-balanced.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("pfn-32") && svg.contains("AUC"));
    assert!(roc.join("roc-logistic-imbalance.csv").exists());
}

#[test]
fn map_renders_masked_pixels_transparent_and_aggregates_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(&dir, 80, 6);
    let grid = dir.path().join("g.grid");
    ok(&[
        "synth-grid",
        "--data",
        s(&data),
        "--seed",
        "2",
        "--width",
        "20",
        "--height",
        "12",
        "--blocks-x",
        "2",
        "--blocks-y",
        "2",
        "--out",
        s(&grid),
    ]);
    let (png, csv) = (dir.path().join("m.png"), dir.path().join("blocks.csv"));
    ok(&["map", "--grid", s(&grid), "--train", s(&data), "--ensembles", "2", "--top-k", "0", "--out", s(&png), "--aggregate", s(&csv)]);

    let image = image::open(&png).unwrap().to_rgba8();
    assert_eq!(image.dimensions(), (20, 12));
    let corner = image.get_pixel(0, 0).0;
    assert_eq!(corner[3], 0, "the grid corner lies outside every block");
    assert!(image.pixels().any(|p| p.0[3] == 255));
    let blocks = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(blocks.lines().count(), 5);
}
