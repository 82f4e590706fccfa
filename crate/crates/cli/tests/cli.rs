use std::path::{Path, PathBuf};

use bofex_cli::manifest::RunManifest;

const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/small.toml");

fn run(workdir: &Path, args: &[&str]) -> i32 {
    let mut argv = vec![
        "bofex".to_string(),
        "--workdir".into(),
        workdir.display().to_string(),
        "--config".into(),
        SMALL.into(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    bofex_cli::run(argv)
}

fn manifest(workdir: &Path, command: &str) -> RunManifest {
    let p: PathBuf = workdir.join("manifests").join(format!("{command}.json"));
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn explain_without_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["explain"]), 2);
}

#[test]
fn bad_invocations_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[gen]\nwells = \"many\"\n").unwrap();
    let code = bofex_cli::run(["bofex", "--config", bad.to_str().unwrap(), "gen"]);
    assert_eq!(code, 1);
    std::fs::write(&bad, "[no-such-command]\n").unwrap();
    let code = bofex_cli::run(["bofex", "--config", bad.to_str().unwrap(), "gen"]);
    assert_eq!(code, 1);
}

#[test]
fn flags_override_config_and_manifest_records_them() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["gen", "--seed", "11"]), 0);
    let m = manifest(dir.path(), "gen");
    assert_eq!(m.seeds["gen"], 11);
    assert_eq!(m.config["seed"], 11);
    assert_eq!(m.config["wells"], 5);
    assert_eq!(m.config_hash.len(), 64);
    assert_eq!(m.config_hash, bofex_cli::manifest::config_hash(&m.config));
    assert!(dir.path().join("data/wells/well_04.csv").exists());
}

#[test]
fn full_chain_produces_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    for cmd in [
        "gen",
        "train-codebooks",
        "featurize",
        "train-gbm",
        "train-fcmh",
        "predict",
        "explain",
        "evaluate",
        "tsne",
        "report",
    ] {
        assert_eq!(run(w, &[cmd]), 0, "{cmd} failed");
        assert!(w.join("manifests").join(format!("{cmd}.json")).exists());
    }
    for f in [
        "codebooks.json",
        "features.jsonl",
        "models/gbm-stuck.json",
        "models/gbm-kickflow.json",
        "models/fcmh-stuck.json",
        "predictions.csv",
        "explanations.jsonl",
        "evaluation/metrics.json",
        "evaluation/tables.txt",
        "tsne/consistency.svg",
    ] {
        assert!(w.join(f).exists(), "{f} missing");
    }
    let html = std::fs::read_to_string(w.join("report.html")).unwrap();
    assert!(html.contains("<svg"));
    assert!(html.contains("class=\"probability\""));
    assert!(html.contains("strict"));

    let first = std::fs::read(w.join("predictions.csv")).unwrap();
    assert_eq!(run(w, &["predict", "--out", w.join("again.csv").to_str().unwrap()]), 0);
    assert_eq!(first, std::fs::read(w.join("again.csv")).unwrap());
}

#[test]
fn missing_codebooks_named_in_featurize() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["gen"]), 0);
    assert_eq!(run(dir.path(), &["featurize"]), 2);
}
