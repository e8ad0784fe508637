use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[occurrence]
count_laws = ["binomial"]

[severity]
families = ["gamma"]
cvs = [1.0]

[sampling]
scenarios = 4
draws = 200
psi_samples = 200
mu_draws = 20
reference_draws = 500

[contracts]
grid_points = 3
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_traffic-risk")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_accepts_a_good_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--config", &write_config(tmp.path(), SMALL)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("valid"));
}

#[test]
fn validate_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[fleet]\nshare = 2.0\n[sampling]\nscenarios = 3\n");
    let out = run(&["validate", "--config", &config]);
    assert!(!out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fleet.share"), "{stdout}");
    assert!(stdout.contains("sampling.scenarios"), "{stdout}");
}

#[test]
fn syntax_errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--config", &write_config(tmp.path(), "[sampling\n")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn simulate_writes_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let dir = tmp.path().join("out");
    let out = run(&["simulate", "--config", &config, "--out", dir.to_str().unwrap(), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["scenarios.csv", "detectors.csv", "hazard_binomial.csv"] {
        assert!(dir.join(name).exists(), "{name}");
    }
}

#[test]
fn report_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let report = |name: &str, threads: &str| {
        let dir = tmp.path().join(name);
        let out = run(&["report", "--config", &config, "--out", dir.to_str().unwrap(), "--seed", "5", "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.join("functionals.csv")).unwrap()
    };
    assert_eq!(report("a", "1"), report("b", "3"));
}

#[test]
fn zero_threads_is_rejected() {
    let out = run(&["simulate", "--threads", "0"]);
    assert!(!out.status.success());
}
