//! End-to-end checks of the binary: argument handling, exit codes, output
//! files, and byte-level reproducibility across runs.

use std::path::Path;
use std::process::Command;

fn heatlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatlab"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const BASE: &str = r#"
seed = 7
trials = 4

[measure]
kind = "point-mass"
eta = 0.0

[solver]
dimension = 1
dt = 0.05
t_end = 0.25
modes_per_axis = 4
grid_per_axis = 8

[coefficients]
sigma = { kind = "const", value = 1.0 }
b = { kind = "zero" }

[constants]
p = 6.0
epsilon = 0.1
"#;

const T2_EXTRA: &str = r#"
[drift]
coefficients = [1.0]

[t2]
n_samples = 8
"#;

#[test]
fn constants_subcommand_succeeds_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("out");
    let status = heatlab()
        .args(["constants", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("manifest.txt").exists());
    assert!(out.join("constants.txt").exists());
}

#[test]
fn invalid_config_fails_with_all_violations() {
    let dir = tempfile::tempdir().unwrap();
    let bad = BASE
        .replace("kind = \"point-mass\"\neta = 0.0", "kind = \"riesz\"\neta = 0.1\nkappa = 1.5")
        .replace("dt = 0.05", "dt = 0.013");
    let cfg = write_config(dir.path(), &bad);
    let output = heatlab()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    // Both the kappa range and the non-integral step count must be cited.
    assert!(stderr.contains("(0, 1)"), "{stderr}");
    assert!(stderr.contains("integral"), "{stderr}");
}

#[test]
fn seed_override_changes_hash_and_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}{T2_EXTRA}"));
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let out3 = dir.path().join("c");
    for (out, seed) in [(&out1, "3"), (&out2, "3"), (&out3, "4")] {
        let status = heatlab()
            .args(["verify-t2", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--trials", "100"])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let m1 = std::fs::read(out1.join("manifest.txt")).unwrap();
    let m2 = std::fs::read(out2.join("manifest.txt")).unwrap();
    let m3 = std::fs::read(out3.join("manifest.txt")).unwrap();
    assert_eq!(m1, m2, "same seed must reproduce byte-identically");
    assert_ne!(m1, m3, "different seed must change results");
    let c1 = std::fs::read(out1.join("t2.csv")).unwrap();
    let c2 = std::fs::read(out2.join("t2.csv")).unwrap();
    assert_eq!(c1, c2);
}

#[test]
fn missing_config_is_a_clean_error() {
    let output = heatlab()
        .args(["constants", "--config", "/nonexistent/exp.toml"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("cannot read config"), "{stderr}");
}
