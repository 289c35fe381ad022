use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skeleton-attack"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its final JSON line.
fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().expect("summary line");
    serde_json::from_str(last).expect("last line is JSON")
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// Small dataset, two linear models and a fast attack config.
fn small_pipeline() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("spec.json"),
        r#"{"schema_version": 1, "class_count": 4, "samples_per_class": 12, "frames": 16, "seed": 3}"#,
    )
    .unwrap();
    fs::write(d.join("atk.json"), r#"{"max_iterations": 60}"#).unwrap();
    let s = ok(d, &["gen-data", "--spec", "spec.json", "--out", "data"]);
    assert_eq!(s["motions"], 48);
    for (name, seed) in [("a.json", "1"), ("b.json", "2")] {
        let s = ok(
            d,
            &["train", "--data", "data", "--arch", "linear", "--out", name, "--seed", seed, "--epochs", "60"],
        );
        assert!(s["test_accuracy"].as_f64().unwrap() > 0.5);
    }
    tmp
}

#[test]
fn attack_outputs_are_complete_and_deterministic() {
    let tmp = small_pipeline();
    let d = tmp.path();
    let base = ["attack", "--model", "a.json", "--data", "data", "--strategy", "ab", "--config", "atk.json", "--out"];
    let first = ok(d, &[&base[..], &["r1"]].concat());
    ok(d, &[&base[..], &["r2"]].concat());
    let s1 = fs::read(d.join("r1/summary.json")).unwrap();
    assert_eq!(s1, fs::read(d.join("r2/summary.json")).unwrap());
    assert_eq!(
        fs::read(d.join("r1/items.csv")).unwrap(),
        fs::read(d.join("r2/items.csv")).unwrap()
    );
    let attacked = first["summary"]["count"].as_u64().unwrap() as usize;
    assert!(first["summary"]["success_rate"].as_f64().unwrap() > 0.5);
    assert_eq!(fs::read_dir(d.join("r1/original")).unwrap().count(), attacked);

    let csv = fs::read_to_string(d.join("r1/items.csv")).unwrap();
    assert!(csv.starts_with("id,label,strategy,success,iterations,"));
    assert_eq!(csv.lines().count(), attacked + 1);
    assert!(!csv.contains('\r'));

    let s = ok(d, &["export", "--results", "r1", "--format", "csv"]);
    assert_eq!(s["items"], attacked);
    let export = fs::read_to_string(d.join("r1/export.csv")).unwrap();
    assert!(export.lines().next().unwrap().ends_with("p_0,p_1,p_2,p_3"));

    let s = ok(d, &["analyze", "--results", "r1", "--out", "report"]);
    assert!(s["samples"].as_u64().unwrap() > 0);
    for f in ["disp_disp.csv", "disp_speed.csv", "disp_accel.csv", "deviation.csv", "report.json"] {
        assert!(d.join("report").join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(d.join("report/deviation.csv")).unwrap().lines().count(),
        26
    );
}

#[test]
fn specified_attack_on_true_label_is_immediate() {
    let tmp = small_pipeline();
    let d = tmp.path();
    ok(
        d,
        &["attack", "--model", "a.json", "--data", "data", "--strategy", "sa:1", "--config", "atk.json", "--out", "r"],
    );
    let items: Value = serde_json::from_str(&fs::read_to_string(d.join("r/items.json")).unwrap()).unwrap();
    let own: Vec<&Value> = items["items"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|it| it["label"] == 1)
        .collect();
    assert!(!own.is_empty());
    for it in own {
        assert_eq!(it["success"], true);
        assert_eq!(it["iterations_used"], 0);
    }

    let s = ok(
        d,
        &["attack", "--model", "a.json", "--data", "data", "--strategy", "sa:random", "--config", "atk.json", "--out", "rr"],
    );
    assert_eq!(s["strategy"], "sa:random");
}

#[test]
fn transfer_writes_report_and_matrices() {
    let tmp = small_pipeline();
    let d = tmp.path();
    let s = ok(
        d,
        &[
            "transfer", "--surrogate", "a.json", "--targets", "a.json,b.json", "--data", "data", "--config",
            "atk.json", "--out", "t",
        ],
    );
    let report = &s["reports"][0];
    assert_eq!(report["targets"][0]["evaluated"], report["whitebox_successes"]);
    assert_eq!(report["targets"][0]["success_rate"], 1.0);
    let matrix = fs::read_to_string(d.join("t/matrix.csv")).unwrap();
    assert!(matrix.starts_with("surrogate,a,b\na,1,"));
    assert!(d.join("t/noise_matrix.csv").exists());
    assert!(d.join("t/transfer.json").exists());
}

#[test]
fn failures_exit_nonzero_with_messages() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("empty")).unwrap();
    let err = fails(d, &["analyze", "--results", "empty", "--out", "report"]);
    assert!(err.contains("no successful attacks"), "{err}");

    fails(d, &["gen-data", "--out", "x", "--bogus-flag"]);
    let err = fails(d, &["train", "--data", "missing", "--arch", "mlp", "--out", "m.json"]);
    assert!(err.contains("missing"), "{err}");

    fs::write(d.join("spec.json"), r#"{"schema_version": 2}"#).unwrap();
    let err = fails(d, &["gen-data", "--spec", "spec.json", "--out", "x"]);
    assert!(err.contains("schema version"), "{err}");

    fs::write(d.join("bad.json"), r#"{"class_count": 1}"#).unwrap();
    fails(d, &["gen-data", "--spec", "bad.json", "--out", "x"]);
}

#[test]
fn default_pipeline_meets_the_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--out", "data"]);
    let t = ok(d, &["train", "--data", "data", "--arch", "mlp", "--out", "model.json", "--seed", "1"]);
    assert!(t["test_accuracy"].as_f64().unwrap() >= 0.9);
    let s = ok(d, &["attack", "--model", "model.json", "--data", "data", "--strategy", "ab", "--out", "results"]);
    assert!(s["summary"]["success_rate"].as_f64().unwrap() >= 0.9, "{s}");
}
