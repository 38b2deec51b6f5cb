use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use proptest::prelude::*;
use serde_json::json;
use tadlab::cache::cache_key;
use tadlab::commands::{execute, Cli};
use tadlab::{run_manifest, RunOptions};
use tadlab_core::data::load_dataset;
use tadlab_core::detectors::{fit_score, read_scores_csv, DetectorConfig, KnnConfig};
use tadlab_core::eval::auroc;
use tadlab_core::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tadlab"))
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["tadlab"];
    full.extend_from_slice(args);
    let code = execute(Cli::parse_from(full), &mut out).expect("command succeeds");
    (code, String::from_utf8(out).unwrap())
}

fn write_manifest(dir: &Path, body: serde_json::Value) -> PathBuf {
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    p
}

fn knn_only(toy: &str) -> serde_json::Value {
    json!({
        "schema_version": 1,
        "seed": 3,
        "datasets": [{ "toy": { "name": toy, "n_normal": 200, "seed": 0 } }],
        "detectors": { "knn": { "k": [5] } }
    })
}

fn small_pretext() -> serde_json::Value {
    json!({
        "schema_version": 1,
        "seed": 11,
        "datasets": [{ "toy": { "name": "moons", "n_normal": 200, "seed": 2 } }],
        "pretext": {
            "tasks": ["rotation", "autoencoder"],
            "losses": ["cross_entropy", "mse"],
            "search_draws": 1,
            "train": { "lr": 0.001, "max_epochs": 3, "batch_size": 32, "patience": 2, "seed": 0, "hidden": 16 },
            "search": { "batch_sizes": [32], "block_choices": [1] }
        },
        "detectors": { "knn": { "k": [3] }, "residual_norm": { "fraction": [0.5] } },
        "subspace_fractions": [1.0, 0.5]
    })
}

#[test]
fn toy_manifest_with_knn_gives_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), knn_only("ring"));
    let report = run_manifest(&m, &RunOptions::default()).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert!(report.cells[0].auroc.is_some());
    let scores = fs::read_to_string(dir.path().join("out/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 2);
    assert!(scores.starts_with("row,knn(k=5)\n"));
}

#[test]
fn resume_hits_cache_and_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), small_pretext());
    let first = run_manifest(&m, &RunOptions::default()).unwrap();
    assert!(first.failed().is_empty(), "{:?}", first.failed());
    // two encoders and their embeddings
    assert_eq!(first.built, 4);
    assert_eq!(first.cache_hits, 0);
    let snapshot = |f: &str| fs::read(dir.path().join("out").join(f)).unwrap();
    let before: Vec<_> = ["scores.csv", "cells.csv", "summary.json"].map(snapshot).into();

    let again = run_manifest(&m, &RunOptions { resume: true, ..Default::default() }).unwrap();
    assert_eq!(again.built, 0);
    assert_eq!(again.cache_hits, 4);
    let after: Vec<_> = ["scores.csv", "cells.csv", "summary.json"].map(snapshot).into();
    assert_eq!(before, after);
}

#[test]
fn rerun_without_resume_retrains_to_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), small_pretext());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_manifest(&m, &RunOptions { out: Some(a.clone()), workers: Some(2), ..Default::default() }).unwrap();
    let r = run_manifest(&m, &RunOptions { out: Some(b.clone()), workers: Some(1), ..Default::default() }).unwrap();
    assert_eq!(r.cache_hits, 0);
    for f in ["scores.csv", "cells.csv", "aggregates.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_dataset_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = knn_only("ring");
    body["datasets"] = json!([{ "path": "nowhere.csv" }]);
    let m = write_manifest(dir.path(), body);
    let err = run_manifest(&m, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn manifest_schema_is_closed() {
    let dir = tempfile::tempdir().unwrap();
    let mut extra = knn_only("ring");
    extra["detector"] = json!({});
    let mut version = knn_only("ring");
    version["schema_version"] = json!(2);
    let mut no_seed = knn_only("ring");
    no_seed.as_object_mut().unwrap().remove("seed");
    let mut empty_grid = knn_only("ring");
    empty_grid["detectors"] = json!({ "knn": { "k": [] } });
    let mut bad_fraction = knn_only("ring");
    bad_fraction["subspace_fractions"] = json!([0.0]);
    for body in [extra, version, no_seed, empty_grid, bad_fraction] {
        let m = write_manifest(dir.path(), body);
        let err = run_manifest(&m, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn failed_cells_give_nonzero_exit_and_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = knn_only("gaussians");
    // more neighbours than training rows
    body["detectors"] = json!({ "knn": { "k": [5, 100000] } });
    let m = write_manifest(dir.path(), body);
    let out = bin().args(["run", "--manifest"]).arg(&m).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAILED"), "{stdout}");
    let cells = fs::read_to_string(dir.path().join("out/cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 3);
    assert!(cells.contains(",ok\n") && cells.contains("failed: "));
}

#[test]
fn cache_env_var_moves_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), small_pretext());
    let cache = dir.path().join("elsewhere");
    let status = bin()
        .args(["run", "--manifest"])
        .arg(&m)
        .env("TADLAB_CACHE", &cache)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(cache.join("encoders").is_dir());
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn every_variant_kind_runs() {
    let dir = tempfile::tempdir().unwrap();
    let wine = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/odds/wine.csv");
    let m = write_manifest(
        dir.path(),
        json!({
            "schema_version": 1,
            "seed": 5,
            "datasets": [{ "path": wine }],
            "detectors": { "knn": { "k": [5] }, "iforest": { "n_trees": [20] } },
            "synthesis": { "kinds": ["local", "cluster", "global", "dependency"], "k_range": [1, 2] },
            "corruption": {
                "kinds": ["add_uninformative", "missing_values", "remove_important", "select_important"],
                "proportions": [0.25, 0.5],
                "forest": { "n_trees": 20 }
            }
        }),
    );
    let report = run_manifest(&m, &RunOptions::default()).unwrap();
    assert!(report.failed().is_empty(), "{:?}", report.failed());
    // clean + 4 synthetic + 4 corruptions at 2 proportions, 2 detectors each
    assert_eq!(report.cells.len(), (1 + 4 + 8) * 2);
    let variants: Vec<&str> = report.cells.iter().map(|c| c.variant.as_str()).collect();
    assert!(variants.contains(&"synthetic_dependency"));
    assert!(variants.contains(&"remove_important_p0.25"));
}

#[test]
fn toy_subcommand_writes_labelled_2d_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ring.csv");
    let (code, _) = run_cli(&["toy", "--name", "ring", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let ds = load_dataset(&out).unwrap();
    assert_eq!(ds.d(), 2);
    assert_eq!(ds.n(), 1050);
    assert_eq!(ds.n_anomalies(), 50);
    let header = fs::read_to_string(&out).unwrap();
    assert!(header.lines().next().unwrap().ends_with(",label"));
}

#[test]
fn detect_and_eval_delegate_to_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    run_cli(&["toy", "--name", "moons", "--seed", "4", "--n-normal", "300", "--out", &p("moons.csv")]);
    run_cli(&["split", "--data", &p("moons.csv"), "--seed", "2", "--out", &p("split.json"), "--partitions", &p("parts")]);
    let (code, _) = run_cli(&[
        "detect", "--kind", "knn", "--k", "5", "--train", &p("parts/train.csv"), "--test", &p("parts/test.csv"),
        "--out", &p("s.csv"),
    ]);
    assert_eq!(code, 0);

    let train = tadlab::io::read_table(&dir.path().join("parts/train.csv")).unwrap();
    let test = tadlab::io::read_table(&dir.path().join("parts/test.csv")).unwrap();
    let want = fit_score(&DetectorConfig::Knn(KnnConfig::new(5)), train.x.view(), test.x.view()).unwrap();
    let (ids, got) = read_scores_csv(dir.path().join("s.csv")).unwrap();
    assert_eq!(ids, (0..want.len()).collect::<Vec<_>>());
    assert_eq!(got, want.to_vec());

    let (_, stdout) = run_cli(&[
        "detect", "--kind", "knn", "--k", "5", "--train", &p("parts/train.csv"), "--test", &p("parts/test.csv"),
    ]);
    assert_eq!(stdout.as_bytes(), fs::read(dir.path().join("s.csv")).unwrap());

    let (_, printed) = run_cli(&["eval", "--scores", &p("s.csv"), "--labels", &p("parts/test.csv")]);
    let expected = auroc(&got, test.labels.as_ref().unwrap()).unwrap();
    assert_eq!(printed.trim().parse::<f64>().unwrap(), expected);
}

#[test]
fn eval_joins_on_row_id() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.csv"), "row_id,score\n0,0.1\n1,0.9\n2,0.5\n").unwrap();
    fs::write(dir.path().join("l.csv"), "row_id,label\n2,0\n1,1\n0,0\n").unwrap();
    let (_, printed) = run_cli(&[
        "eval",
        "--scores",
        dir.path().join("s.csv").to_str().unwrap(),
        "--labels",
        dir.path().join("l.csv").to_str().unwrap(),
    ]);
    assert_eq!(printed.trim(), "100.0");
}

#[test]
fn stage_subcommands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let wine = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/odds/wine.csv");
    let (_, summary) = run_cli(&["ingest", "--input", wine, "--out", &p("wine.csv")]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["columns"], 13);
    run_cli(&[
        "split", "--data", &p("wine.csv"), "--seed", "0", "--out", &p("split.json"), "--partitions", &p("parts"),
        "--standardize",
    ]);
    let (code, _) = run_cli(&[
        "synth", "--kind", "local", "--train", &p("parts/train.csv"), "--n", "20", "--seed", "1", "--out",
        &p("local.csv"), "--k-range", "1,2",
    ]);
    assert_eq!(code, 0);
    assert_eq!(tadlab::io::read_table(&dir.path().join("local.csv")).unwrap().x.nrows(), 20);
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("local.csv.gen.json")).unwrap()).unwrap();
    assert_eq!(rec["seed"], 1);

    let (code, _) = run_cli(&[
        "corrupt", "--kind", "select-important", "--proportion", "0.5", "--train", &p("parts/train.csv"), "--val",
        &p("parts/val.csv"), "--test", &p("parts/test.csv"), "--ranking-data", &p("wine.csv"), "--out-dir",
        &p("sel"),
    ]);
    assert_eq!(code, 0);
    let sel = tadlab::io::read_table(&dir.path().join("sel/test.csv")).unwrap();
    assert_eq!(sel.x.ncols(), 7);
    assert!(sel.labels.is_some());

    let (code, _) = run_cli(&[
        "train", "--task", "shuffle", "--loss", "cross_entropy", "--train", &p("parts/train.csv"), "--val",
        &p("parts/val.csv"), "--draws", "1", "--max-epochs", "2", "--out", &p("enc.bin"),
    ]);
    assert_eq!(code, 0);
    assert!(dir.path().join("enc.bin.curve.csv").is_file());
    run_cli(&["embed", "--encoder", &p("enc.bin"), "--input", &p("parts/test.csv"), "--out", &p("z.csv")]);
    let z = tadlab::io::read_table(&dir.path().join("z.csv")).unwrap();
    assert_eq!(z.x.ncols(), 128);
    assert_eq!(z.labels, sel.labels);
}

#[test]
fn report_subcommand_rebuilds_the_score_table() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), small_pretext());
    run_manifest(&m, &RunOptions::default()).unwrap();
    let out = dir.path().join("rebuilt");
    let cells = dir.path().join("out/cells.csv");
    run_cli(&["report", "--cells", cells.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for f in ["scores.csv", "aggregates.csv", "subspace.svg"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(dir.path().join("out").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reference_manifest_validates() {
    let p = concat!(env!("CARGO_MANIFEST_DIR"), "/../../manifests/reference.json");
    tadlab::ExperimentManifest::load(Path::new(p)).unwrap();
}

proptest! {
    #[test]
    fn cache_key_tracks_data_config_and_seed(
        a in "[0-9a-f]{8}", b in "[0-9a-f]{8}", k1 in 1usize..50, k2 in 1usize..50, s1: u64, s2: u64,
    ) {
        let cfg = |k| DetectorConfig::Knn(KnnConfig::new(k));
        let base = cache_key(&a, &cfg(k1), s1).unwrap();
        prop_assert_eq!(&base, &cache_key(&a, &cfg(k1), s1).unwrap());
        prop_assert_eq!(a == b, base == cache_key(&b, &cfg(k1), s1).unwrap());
        prop_assert_eq!(k1 == k2, base == cache_key(&a, &cfg(k2), s1).unwrap());
        prop_assert_eq!(s1 == s2, base == cache_key(&a, &cfg(k1), s2).unwrap());
    }
}
