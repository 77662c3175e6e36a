use std::path::Path;
use std::process::{Command, Output};

fn onebit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onebit"))
        .args(args)
        .env_remove("OBS_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
    "dataset": {"synthetic": {"classes": 3, "per_class": 30, "test_per_class": 10, "dim": 4}},
    "n_full": 6,
    "stage_quotas": [20, 10],
    "train": {"epochs_initial": 3, "epochs_per_stage": 2},
    "seed": 5
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_small(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let config = write_config(dir, "small.json", SMALL);
    let out = dir.join(out);
    let mut args = vec!["run", "--config", &config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    onebit(&args)
}

#[test]
fn gen_data_is_deterministic_and_validates_flags() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.obs");
    let b = dir.path().join("b.obs");
    for path in [&a, &b] {
        let o = onebit(&[
            "gen-data", "--classes", "4", "--per-class", "10", "--dim", "3", "--seed", "9", "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), "N=40 d=3 C=4");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = onebit(&["gen-data", "--classes", "1", "--per-class", "10", "--dim", "3", "--out", "x.obs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--classes"));

    let missing = dir.path().join("no/such/dir/d.obs");
    let o = onebit(&[
        "gen-data", "--classes", "3", "--per-class", "4", "--dim", "2", "--out", missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn plan_prints_the_table() {
    let o = onebit(&["plan", "--full-equivalent", "10000", "--classes", "100", "--n-full", "3000"]);
    let text = stdout(&o);
    assert!(o.status.success());
    assert!(text.contains("total bits: 66438.6"));
    assert!(text.contains("46506"));

    let o = onebit(&[
        "plan", "--full-equivalent", "10000", "--classes", "100", "--n-full", "3000", "--allow-overshoot",
    ]);
    assert!(stdout(&o).contains("47000"));
    assert!(stdout(&o).contains("66931.6"));

    let o = onebit(&["plan", "--total-bits", "100.5", "--classes", "10", "--n-full", "0"]);
    assert!(stdout(&o).contains(" 100 "));

    let o = onebit(&["plan", "--total-bits", "10", "--classes", "10", "--n-full", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn theory_threshold_and_curve() {
    let o = onebit(&["theory", "threshold", "--classes", "100"]);
    assert_eq!(stdout(&o).trim(), "0.276187");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = onebit(&["theory", "curve", "--classes", "10", "--out", out.to_str().unwrap(), "--points", "9"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p,f,rhs");
    assert_eq!(lines.len(), 10);
    // f(1/2) = 2 exactly.
    assert!(lines[5].starts_with("0.5,2,"));
}

#[test]
fn run_writes_report_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_small(dir.path(), "r1", &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(stdout(&first).trim().matches('→').count(), 2);
    run_small(dir.path(), "r2", &[]);
    let m1 = std::fs::read(dir.path().join("r1/metrics.csv")).unwrap();
    let m2 = std::fs::read(dir.path().join("r2/metrics.csv")).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn minimal_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "minimal.json",
        r#"{"stage_quotas": [50], "train": {"epochs_initial": 1, "epochs_per_stage": 1}}"#,
    );
    let out = dir.path().join("out");
    let o = onebit(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.json", r#"{"stage_quotas": [5], "train": {"epoch": 3}}"#);
    let o = onebit(&["run", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/train/epoch"), "{}", stderr(&o));

    let o = onebit(&["run", "--config", "/definitely/missing.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path(), "a", &[]);
    let config = dir.path().join("small.json");
    let out = dir.path().join("b");
    let o = Command::new(env!("CARGO_BIN_EXE_onebit"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("OBS_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 77);
}

#[test]
fn analyze_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    run_small(dir.path(), "one", &[]);
    run_small(dir.path(), "base", &["--baseline"]);
    let one = dir.path().join("one");
    let base = dir.path().join("base");

    let o = onebit(&["analyze", "--report", one.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows = text.lines().filter(|l| l.split_whitespace().count() == 6 && l.trim_start().starts_with(char::is_numeric));
    assert_eq!(rows.count(), 3);

    let o = onebit(&["analyze", "--report", one.to_str().unwrap(), "--compare", one.to_str().unwrap()]);
    let text = stdout(&o);
    assert!(text.contains("final accuracy delta: +0.00 points"));
    assert!(text.contains("equal bits: yes"));

    let o = onebit(&["analyze", "--report", one.to_str().unwrap(), "--compare", base.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("equal bits: yes"));

    let o = onebit(&["analyze", "--report", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
