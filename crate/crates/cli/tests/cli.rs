use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use pempc::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};
use pempc::MpcProblem;

fn pempc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pempc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("stderr ends with a JSON error")
}

/// Small certified instance shared by the pipeline tests.
fn prepared() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let out = pempc(&dir, &["generate", "--I", "1", "--N", "3", "--invariant-set", "--output", "p.json"]);
        assert!(out.status.success());
        assert!(pempc(&dir, &["precompute", "--problem", "p.json"]).status.success());
        dir
    })
}

#[test]
fn generate_uses_the_default_physical_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = pempc(dir.path(), &["generate", "--benchmark", "spring-damper", "--I", "3", "--N", "30", "-o", "prob.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((summary["h"].as_f64(), summary["k"].as_f64()), (Some(0.1), Some(3.0)));
    assert_eq!((summary["m"].as_f64(), summary["d"].as_f64()), (Some(1.0), Some(3.0)));
    let written = MpcProblem::load(&dir.path().join("prob.json")).unwrap();
    let spec = InterconnectedSpec { i_bar: 3, h: 0.1, k_spring: 3.0, m_mass: 1.0, d_damp: 3.0 };
    let expected = build_spring_damper_benchmark(&spec, &Weights::default(), 30).unwrap();
    assert_eq!(written.content_hash(), expected.content_hash());
    assert_eq!(written.horizon, 30);
}

#[test]
fn run_without_store_asks_for_precompute() {
    let dir = tempfile::tempdir().unwrap();
    assert!(pempc(dir.path(), &["generate", "--I", "1", "--N", "3", "--output", "p.json"]).status.success());
    let out = pempc(dir.path(), &["run", "--problem", "p.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "precompute_required");
    assert!(err["message"].as_str().unwrap().contains("precompute required"));
}

#[test]
fn precompute_is_idempotent() {
    let dir = prepared();
    let store = dir.join("p.store.json");
    let before = std::fs::read(&store).unwrap();
    let again = pempc(dir, &["precompute", "--problem", "p.json"]);
    assert!(again.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(summary["rebuilt"], false);
    assert_eq!(std::fs::read(&store).unwrap(), before);

    let copy = dir.join("forced.store.json");
    let out = pempc(dir, &["precompute", "--problem", "p.json", "--store", "forced.store.json", "--force"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&copy).unwrap(), before);
}

#[test]
fn certify_then_run_reports_a_valid_certificate() {
    let dir = prepared();
    let out = pempc(dir, &["certify", "--problem", "p.json", "--out-dir", "cert"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("certificate: valid"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("cert/certificate.json")).unwrap()).unwrap();
    let mbar = report["mbar"].as_u64().unwrap().to_string();

    let out = pempc(dir, &["run", "--problem", "p.json", "--out-dir", "cert", "--mbar", &mbar, "--steps", "20", "--x0", "0.3,-0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.join("cert/run.log")).unwrap();
    assert!(log.contains("certificate: valid"), "{log}");
    assert!(log.contains("violation: none"));
    let jsonl = std::fs::read_to_string(dir.join("cert/trajectory.jsonl")).unwrap();
    let csv = std::fs::read_to_string(dir.join("cert/trajectory.csv")).unwrap();
    assert_eq!(jsonl.lines().count(), csv.lines().count());
}

fn states_of(path: &Path) -> Vec<(serde_json::Value, serde_json::Value)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["x"].clone(), v["u"].clone())
        })
        .collect()
}

#[test]
fn seed_and_jobs_give_reproducible_runs() {
    let dir = prepared();
    let mut runs = Vec::new();
    for (name, jobs) in [("s1", "1"), ("s2", "4")] {
        let out = pempc(dir, &["run", "--problem", "p.json", "--seed", "11", "--jobs", jobs, "--steps", "10", "--out-dir", name]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(states_of(&dir.join(name).join("trajectory.jsonl")));
    }
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = prepared();
    std::fs::write(dir.join("cfg.toml"), "problem = \"p.json\"\nsteps = 7\nx0 = [0.2, 0.0]\nout_dir = \"cfgout\"\n").unwrap();
    let count = |extra: &[&str]| {
        let mut args = vec!["run", "--config", "cfg.toml"];
        args.extend_from_slice(extra);
        let out = pempc(dir, &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        states_of(&dir.join("cfgout/trajectory.jsonl")).len()
    };
    assert_eq!(count(&[]), 7);
    assert_eq!(count(&["--steps", "4"]), 4);

    std::fs::write(dir.join("bad.toml"), "stepz = 3\n").unwrap();
    let out = pempc(dir, &["run", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn compare_writes_one_row_per_iteration_count() {
    let dir = prepared();
    let out = pempc(dir, &["compare", "--problem", "p.json", "--mbars", "1,4,30", "--steps", "15", "--x0", "0.3,0", "--out-dir", "cmp"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("cmp/degradation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "mbar,cost,exact_cost,degradation,bound");
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("30,"));
}

#[test]
fn usage_errors_are_json_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pempc(dir.path(), &["run", "--problem", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "io");
    let out = pempc(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pempc(dir.path(), &["selftest", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["suites"].as_array().unwrap().iter().all(|s| s["passed"] == true));
}
