//! Acceptance criterion 6: every command is reproducible from its run
//! manifest: re-running, including with `--threads 8`, regenerates every
//! output byte-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_morphfit")
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch morphfit binary")
}

fn assert_ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest_outputs(manifest_path: &Path) -> Vec<PathBuf> {
    let text = std::fs::read_to_string(manifest_path).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| PathBuf::from(v.as_str().unwrap()))
        .collect()
}

fn snapshot(dir: &Path, outputs: &[PathBuf]) -> BTreeMap<PathBuf, Vec<u8>> {
    outputs
        .iter()
        .map(|p| {
            let abs = dir.join(p);
            (p.clone(), std::fs::read(&abs).unwrap_or_else(|e| panic!("read {abs:?}: {e}")))
        })
        .collect()
}

/// Run a command, then replay its manifest with `--threads 8` (after
/// deleting the outputs) and compare every output byte for byte.
fn check_reproducible(dir: &Path, name: &str, args: &[&str], manifest: &str) {
    let out = run(dir, args);
    assert_ok(&out, name);
    let manifest_path = dir.join(manifest);
    assert!(manifest_path.exists(), "{name}: manifest {manifest:?} missing");
    let outputs = manifest_outputs(&manifest_path);
    assert!(!outputs.is_empty(), "{name}: no recorded outputs");
    let before = snapshot(dir, &outputs);

    for p in &outputs {
        std::fs::remove_file(dir.join(p)).unwrap();
    }
    let rerun = run(dir, &["rerun", "--manifest", manifest, "--threads", "8"]);
    assert_ok(&rerun, &format!("{name} rerun"));
    let after = snapshot(dir, &outputs);
    for (path, bytes) in &before {
        assert_eq!(
            bytes,
            after.get(path).unwrap(),
            "{name}: output {path:?} differs after rerun with --threads 8"
        );
    }
}

#[test]
fn criterion_6_manifest_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    check_reproducible(
        dir,
        "gen-model",
        &["gen-model", "--out", "model.figm", "--grid", "10", "--seed", "5"],
        "model.figm.manifest.json",
    );
    check_reproducible(
        dir,
        "gen-dataset",
        &[
            "gen-dataset",
            "--model",
            "model.figm",
            "--out-dir",
            "ds",
            "--n-samples",
            "4",
            "--embed-dim",
            "64",
            "--width",
            "16",
            "--height",
            "16",
            "--seed",
            "3",
        ],
        "ds/dataset.manifest.json",
    );
    check_reproducible(
        dir,
        "render",
        &["render", "--model", "model.figm", "--out", "mean.ppm", "--width", "32", "--height", "32"],
        "mean.ppm.manifest.json",
    );
    check_reproducible(
        dir,
        "fit",
        &[
            "fit",
            "--model",
            "model.figm",
            "--image",
            "ds/sample_00000.ppm",
            "--landmarks",
            "ds/sample_00000.landmarks",
            "--out-params",
            "fit.json",
            "--trace",
            "trace.csv",
            "--max-iters",
            "40",
        ],
        "fit.json.manifest.json",
    );
    check_reproducible(
        dir,
        "train-head",
        &[
            "train-head",
            "--model",
            "model.figm",
            "--dataset-dir",
            "ds",
            "--out-weights",
            "head.figh",
            "--curve",
            "curve.csv",
            "--total-iters",
            "3",
            "--batch-size",
            "2",
            "--grad-accum",
            "1",
            "--learning-rate",
            "1e-3",
        ],
        "head.figh.manifest.json",
    );
    check_reproducible(
        dir,
        "eval",
        &[
            "eval",
            "--model",
            "model.figm",
            "--params",
            "fit.json",
            "--image",
            "ds/sample_00000.ppm",
            "--landmarks",
            "ds/sample_00000.landmarks",
            "--out",
            "metrics.json",
        ],
        "metrics.json.manifest.json",
    );
    check_reproducible(
        dir,
        "gradcheck",
        &[
            "gradcheck",
            "--model",
            "model.figm",
            "--width",
            "16",
            "--height",
            "16",
            "--blocks",
            "phi,gamma",
            "--tolerance",
            "1e-4",
            "--out",
            "gradcheck.json",
            "--seed",
            "2",
        ],
        "gradcheck.json.manifest.json",
    );

    println!(
        "acceptance criterion 6 (manifest determinism): PASS \
         (gen-model, gen-dataset, render, fit, train-head, eval, gradcheck \
         all byte-identical after rerun with --threads 8)"
    );
}
