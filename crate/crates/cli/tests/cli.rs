use std::path::Path;
use std::process::{Command, Output};

use ivos_core::eval::benchmark_object_scaling;
use ivos_core::synth::{generate_scene, random_scene};
use ivos_core::EngineConfig;
use serde_json::Value;

fn ivos(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivos"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    let v: Value = serde_json::from_str(line).expect("machine-readable error line");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn small_suite(dir: &Path) {
    let out = ivos(
        &["gen-data", "--out", "suite", "--seed", "40", "--scenes", "2", "--frames", "6", "--size", "48"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path());
    assert!(dir.path().join("suite/scene01/masks/00005.png").is_file());
    let args = ["evaluate", "--suite", "suite", "--frames-per-round", "1", "--rounds", "2", "--seed", "3"];
    let a = ivos(&[&args[..], &["--out", "a/report.csv"]].concat(), dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = ivos(&[&args[..], &["--out", "b/report.csv"]].concat(), dir.path());
    assert!(b.status.success());
    for f in ["report.csv", "report.json", "report.objects.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 2 + 1);
    assert!(rows[3].starts_with("mean,1,2,"));
    let summary: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(summary["scenes"].as_array().unwrap().len(), 2);
    assert_eq!(summary["scenes"][0]["rounds"].as_array().unwrap().len(), 2);
}

#[test]
fn evaluate_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path());
    let out = ivos(&["evaluate", "--suite", "suite", "--frames-per-round", "7", "--out", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
    let out = ivos(&["evaluate", "--suite", "missing", "--out", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = ivos(&["evaluate", "--suite", "suite", "--out", "r.csv", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn bench_csv_matches_library_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let scene = random_scene("tiny", 8, 3, 3, 32, 32);
    std::fs::write(dir.path().join("scene.json"), serde_json::to_string(&scene).unwrap()).unwrap();
    let out = ivos(
        &["bench", "--objects", "1..3", "--trials", "3", "--scene", "scene.json", "--out", "bench.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);

    let lib = benchmark_object_scaling(&generate_scene(&scene).unwrap(), &[1, 2, 3], 1, &EngineConfig::default()).unwrap();
    for (row, want) in rows.iter().zip(&lib.rows) {
        assert_eq!(row[0].parse::<usize>().unwrap(), want.objects);
        assert_eq!(row[3].parse::<u64>().unwrap(), want.concurrent_macs);
        assert_eq!(row[4].parse::<u64>().unwrap(), want.per_object_macs);
    }
    let out = ivos(&["bench", "--trials", "2", "--out", "b.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn metrics_on_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    small_suite(dir.path());
    let out = ivos(
        &["metrics", "--pred", "suite/scene00/masks", "--gt", "suite/scene00/masks", "--out", "m.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mean_j"], 1.0);
    assert_eq!(v["mean_f"], 1.0);
    assert_eq!(v["objects"], 3);
    let out = ivos(&["metrics", "--pred", "suite/scene00/masks", "--gt", "suite/scene01/frames"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn help_lists_flags_and_bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ivos(&["evaluate", "--help"], dir.path());
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--suite", "--frames-per-round", "--rounds", "--seed", "--out", "--threads"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    std::fs::write(dir.path().join("svc.toml"), "port = \"high\"\n").unwrap();
    let out = ivos(&["serve", "--config", "svc.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "config");
}
