use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pairweight"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is one JSON record");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn check_design_srswor_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["check-design", "--design", "srswor", "--N", "6", "--n", "2", "--out", dir.path().to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["gamma"]["value"], 15.0);
    let file: serde_json::Value = serde_json::from_slice(&read(dir.path(), "conditions.json")).unwrap();
    assert_eq!(file, v);
}

#[test]
fn gen_pop_full_config_has_6000_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("full.toml");
    ok(&["gen-pop", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let mut r = csv::Reader::from_path(dir.path().join("population.csv")).unwrap();
    assert_eq!(r.records().count(), 6000);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = config("smoke.toml");
    let cfg = cfg.to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(a.path(), "1"), (b.path(), "2")] {
        let d = dir.to_str().unwrap();
        ok(&["gen-pop", "--config", cfg, "--seed", "7", "--out", d]);
        ok(&["draw-sample", "--config", cfg, "--seed", "7", "--out", d]);
        ok(&["weights", "--config", cfg, "--seed", "7", "--schemes", "marginal,full_pairwise,hh_pairwise", "--out", d]);
        ok(&["fit", "--config", cfg, "--seed", "7", "--scheme", "hh_pairwise", "--threads", threads, "--out", d]);
        ok(&["run-experiment", "--config", cfg, "--seed", "7", "--out", d]);
    }
    for name in [
        "population.csv",
        "sample.csv",
        "weights_marginal.csv",
        "weights_full_pairwise.csv",
        "weights_hh_pairwise.csv",
        "draws.csv",
        "diagnostics.json",
        "curve.csv",
        "report.csv",
        "reference.csv",
        "summary.json",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn seed_override_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["draw-sample", "--seed", "1", "--out", a.path().to_str().unwrap()]);
    ok(&["draw-sample", "--seed", "2", "--out", b.path().to_str().unwrap()]);
    assert_ne!(read(a.path(), "sample.csv"), read(b.path(), "sample.csv"));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["check-design", "--design", "census", "--N", "4", "--out", d]);
    let out = run(&["check-design", "--design", "census", "--N", "4", "--out", d]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "output_exists");
    ok(&["check-design", "--design", "census", "--N", "4", "--out", d, "--force"]);
}

#[test]
fn bad_invocations_give_error_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    let out = run(&["gen-pop", "--frobnicate", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");

    let out = run(&["gen-pop", "--config", "/nonexistent/config.toml", "--out", d]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "invalid_config");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "replications = 0\nunknown_key = 3\n").unwrap();
    let out = run(&["run-experiment", "--config", bad.to_str().unwrap(), "--out", d]);
    assert_eq!(error_kind(&out), "invalid_config");

    let out = run(&["check-design", "--design", "srswor", "--N", "6", "--out", d]);
    assert_eq!(error_kind(&out), "invalid_config");
}

#[test]
fn thresholds_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[thresholds]\ngamma_max = 10.0\n").unwrap();
    let out = ok(&[
        "check-design", "--design", "srswor", "--N", "6", "--n", "2",
        "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let gamma = v["checks"].as_array().unwrap().iter().find(|c| c["condition"] == "gamma").unwrap();
    assert_eq!(gamma["pass"], false);
}
