//! End-to-end tests that drive the compiled binary the way a user would:
//! real files on disk, real exit codes, byte-for-byte output checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use trajlearn::data::{synth_generate, write_demos_csv, SynthKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajlearn"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Writes a small planar corpus and returns (workdir, csv path).
fn sine_workspace() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let (m, demos) = synth_generate(SynthKind::SineArc { demos: 4, samples: 60, noise: 0.01 }, 5);
    let csv = dir.path().join("demos.csv");
    write_demos_csv(&csv, &m, &demos).unwrap();
    (dir, csv)
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_reproduce_evaluate_round_trip() {
    let (dir, _) = sine_workspace();
    let d = dir.path();

    run_ok(d, &["train", "--data", "demos.csv", "--k", "4", "--out-dir", "run"]);
    let report = json_file(&d.join("run/report.json"));
    assert_eq!(report["method"], "em");
    assert_eq!(report["k"], 4);
    assert_eq!(report["converged"], true);

    run_ok(d, &["reproduce", "--model", "run/model.json", "--out-dir", "run"]);
    let csv = fs::read_to_string(d.join("run/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,x1,c0_0,c0_1,c1_0,c1_1");
    assert_eq!(lines.count(), 200);

    run_ok(
        d,
        &["evaluate", "--data", "demos.csv", "--trajectory", "run/trajectory.csv", "--out-dir", "run"],
    );
    let metrics = json_file(&d.join("run/metrics.json"));
    let rmse = metrics["rmse"].as_f64().unwrap();
    assert!(rmse < 0.05, "regression strays from the demonstrations: rmse {rmse}");
}

#[test]
fn config_file_values_lose_to_flags() {
    let (dir, _) = sine_workspace();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{ "k": 3, "samples": 17 }"#).unwrap();

    run_ok(
        d,
        &["train", "--config", "cfg.json", "--data", "demos.csv", "--k", "5", "--out-dir", "run"],
    );
    assert_eq!(json_file(&d.join("run/report.json"))["k"], 5);

    // samples came from the file and survives into reproduce
    run_ok(
        d,
        &["reproduce", "--config", "cfg.json", "--model", "run/model.json", "--out-dir", "run"],
    );
    let csv = fs::read_to_string(d.join("run/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 18);
}

#[test]
fn missing_inputs_are_config_errors_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--out-dir", "run"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "one-line diagnostics, got: {stderr}");
    assert!(stderr.starts_with("error: "), "got: {stderr}");

    let out = run(dir.path(), &["train", "--data", "absent.csv", "--out-dir", "run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn colliding_constraint_times_exit_with_the_numerical_code() {
    let (dir, _) = sine_workspace();
    let d = dir.path();
    // same instant, far-apart poses: they bind different components, and the
    // pinned time means end up on top of each other
    fs::write(
        d.join("bad.json"),
        r#"[ { "t_des": 30.0, "x_des": [0.02, 0.0] }, { "t_des": 30.0, "x_des": [0.98, 0.0] } ]"#,
    )
    .unwrap();

    let out = run(
        d,
        &["train", "--method", "cem", "--data", "demos.csv", "--constraints", "bad.json", "--k", "5", "--out-dir", "run"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn repeated_runs_write_byte_identical_files() {
    let (dir, _) = sine_workspace();
    let d = dir.path();
    for out in ["a", "b"] {
        run_ok(d, &["train", "--data", "demos.csv", "--k", "4", "--out-dir", out]);
        run_ok(d, &["reproduce", "--model", &format!("{out}/model.json"), "--out-dir", out]);
    }
    for name in ["model.json", "report.json", "trajectory.csv"] {
        let a = fs::read(d.join("a").join(name)).unwrap();
        let b = fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn a_single_sample_grid_writes_one_row() {
    let (dir, _) = sine_workspace();
    let d = dir.path();
    run_ok(d, &["train", "--data", "demos.csv", "--k", "4", "--out-dir", "run"]);
    run_ok(d, &["reproduce", "--model", "run/model.json", "--samples", "1", "--out-dir", "run"]);
    let csv = fs::read_to_string(d.join("run/trajectory.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("0,"), "single sample sits at the grid start: {}", rows[1]);
}

#[test]
fn one_identity_frame_reproduces_like_the_plain_fit() {
    let (dir, _) = sine_workspace();
    let d = dir.path();
    fs::write(
        d.join("frames.json"),
        r#"[ { "rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0] } ]"#,
    )
    .unwrap();

    run_ok(d, &["train", "--data", "demos.csv", "--k", "4", "--out-dir", "plain"]);
    run_ok(d, &["reproduce", "--model", "plain/model.json", "--out-dir", "plain"]);
    run_ok(
        d,
        &["train", "--method", "tpgmm", "--data", "demos.csv", "--frames", "frames.json", "--k", "4", "--out-dir", "tp"],
    );
    run_ok(
        d,
        &["reproduce", "--model", "tp/model.json", "--frames", "frames.json", "--out-dir", "tp"],
    );

    let parse = |name: &str| -> Vec<Vec<f64>> {
        fs::read_to_string(d.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let plain = parse("plain/trajectory.csv");
    let tp = parse("tp/trajectory.csv");
    assert_eq!(plain.len(), tp.len());
    for (p, q) in plain.iter().zip(&tp) {
        for (a, b) in p.iter().zip(q) {
            assert!((a - b).abs() < 1e-9, "identity-frame fusion moved the trajectory: {a} vs {b}");
        }
    }
}

#[test]
fn compare_ranks_the_constrained_fit_at_the_poses() {
    let (dir, _) = sine_workspace();
    let d = dir.path();
    fs::write(
        d.join("cons.json"),
        r#"[ { "t_des": 0.0, "x_des": [0.05, 0.03] }, { "t_des": 60.0, "x_des": [0.95, -0.05] } ]"#,
    )
    .unwrap();

    run_ok(
        d,
        &["compare", "--data", "demos.csv", "--constraints", "cons.json", "--k", "5", "--out-dir", "cmp"],
    );
    for name in [
        "compare.csv",
        "compare.json",
        "trajectory_em.csv",
        "trajectory_cem.csv",
        "trajectory_bagging.csv",
    ] {
        assert!(d.join("cmp").join(name).exists(), "missing {name}");
    }
    let table = fs::read_to_string(d.join("cmp/compare.csv")).unwrap();
    assert!(table.starts_with("method,rmse,constraint0_error,constraint1_error,max_constraint_error"));
    let max_err = |m: &str| -> f64 {
        let row = table.lines().find(|l| l.starts_with(m)).unwrap();
        row.rsplit(',').next().unwrap().parse().unwrap()
    };
    assert!(max_err("cem") < 1e-3, "constrained fit misses its poses: {}", max_err("cem"));
    assert!(max_err("cem") < max_err("em"));
    assert!(max_err("cem") < max_err("bagging"));
}
