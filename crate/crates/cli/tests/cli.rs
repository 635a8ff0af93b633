use std::path::Path;
use std::process::{Command, Output};

fn steerlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steerlab")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_then_analyze_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("scenario.toml"),
        "duration = 20.0\n[driver]\nkind = \"synthetic\"\nnoise_std = 0.01\naccel_noise_std = 2.0\n",
    )
    .unwrap();
    std::fs::create_dir(d.join("recs")).unwrap();
    for seed in ["1", "2", "3"] {
        ok(steerlab(
            &[
                "simulate",
                "--mode",
                "human-in-control",
                "--config",
                "scenario.toml",
                "--seed",
                seed,
                "--out",
                &format!("recs/h{seed}.txt"),
            ],
            d,
        ));
    }
    ok(steerlab(&["simulate", "--mode", "autonomy-in-control", "--seed", "4", "--out", "recs/a4.stlr"], d));

    let report = ok(steerlab(
        &["analyze", "--coeffs", "synthetic", "--records", "recs", "--alpha", "0.05", "--max-lag", "30"],
        d,
    ));
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["trajectories"].as_array().unwrap().len(), 4);
    assert_eq!(v["options"]["max_lag"], 30);
    assert!(v["cross_test"].is_object());

    ok(steerlab(&["fit", "--records", "recs/h1.txt", "recs/h2.txt", "recs/h3.txt", "--out", "fit.json"], d));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["names"][0], "a0");
    assert_eq!(fit["standard_errors"].as_array().unwrap().len(), 9);

    ok(steerlab(&["analyze", "--coeffs", "fit.json", "--records", "recs/h1.txt", "--report", "r.json"], d));
    std::fs::write(d.join("nine.json"), "[0.5,-0.4,1.05,-1.0,0,0,0.05,0,0]").unwrap();
    let a = ok(steerlab(&["analyze", "--coeffs", "nine.json", "--records", "recs/h1.txt"], d));
    let b = ok(steerlab(&["analyze", "--coeffs", "synthetic", "--records", "recs/h1.txt"], d));
    assert_eq!(a, b);
}

#[test]
fn batch_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(steerlab(&["batch", "--runs", "2", "--out-dir", "one"], d));
    ok(steerlab(&["batch", "--seeds", "1,2", "--out-dir", "two"], d));
    let one = std::fs::read(d.join("one/summary.json")).unwrap();
    assert_eq!(one, std::fs::read(d.join("two/summary.json")).unwrap());
    assert_eq!(
        std::fs::read(d.join("one/human-in-control-0001.txt")).unwrap(),
        std::fs::read(d.join("two/human-in-control-0001.txt")).unwrap()
    );
    let v: serde_json::Value = serde_json::from_slice(&one).unwrap();
    assert!(v["cross_test"].is_null());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(!steerlab(&["simulate", "--mode", "sideways", "--out", "x.txt"], d).status.success());
    assert!(!steerlab(&["batch", "--runs", "3", "--seeds", "1,2"], d).status.success());
    std::fs::write(d.join("bad.toml"), "duration = 1.05\n").unwrap();
    let out = steerlab(&["simulate", "--config", "bad.toml", "--out", "x.txt"], d);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!steerlab(&["analyze", "--coeffs", "synthetic", "--records", "missing.txt"], d).status.success());
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let config = steerlab_harness::ScenarioConfig::load(&path).unwrap();
        config.validate().unwrap();
        n += 1;
    }
    assert!(n >= 4);
}
