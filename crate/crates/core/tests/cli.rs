use std::path::Path;
use std::process::Command;

fn fvlrp(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fvlrp")).args(args).arg("--out").arg(out).output().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, "[corpus]\ntrain = 40\ntest = 10\n[nn]\nepochs = 5\n[morf]\nrepetitions = 2\n").unwrap();
    path
}

#[test]
fn explain_without_svm_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = fvlrp(dir.path(), &["explain"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("svm-train"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fvlrp(dir.path(), &["explain", "--variant", "median"]).status.code(), Some(1));
    assert_eq!(fvlrp(dir.path(), &["no-such-stage"]).status.code(), Some(1));
    assert_eq!(fvlrp(dir.path(), &["synth-gen", "--config", "/nonexistent.toml"]).status.code(), Some(1));
}

#[test]
fn stale_and_modified_caches_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    for stage in ["synth-gen", "extract"] {
        assert!(fvlrp(&out, &[stage, "--config", cfg]).status.success(), "{stage}");
    }
    let stale = fvlrp(&out, &["pca-fit", "--config", cfg, "--seed", "9"]);
    assert_eq!(stale.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&stale.stderr).contains("extract"));
    std::fs::write(out.join("cache/descriptors/train/000000.desc"), b"tampered").unwrap();
    let modified = fvlrp(&out, &["pca-fit", "--config", cfg]);
    assert_eq!(modified.status.code(), Some(2));
}

#[test]
fn full_pipeline_verifies_and_records_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    for stage in ["synth-gen", "extract", "pca-fit", "gmm-fit", "embed", "svm-train", "nn-train", "predict", "explain", "verify"] {
        let o = fvlrp(&out, &[stage, "--config", cfg]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifests/verify.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["seed"], 0);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}
