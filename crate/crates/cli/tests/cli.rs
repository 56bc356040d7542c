use std::path::Path;
use std::process::{Command, Output};

fn cvsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "dt = 1e-3\nn_samples = 300\neps_grid = [0.5, 0.25]\noutput = \"out.csv\"\n";

#[test]
fn sweep_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = cvsim(&["sweep", &cfg], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert!(csv.starts_with("eps,nvar_over_eps,nvar_over_eps2,i_hat,j_hat,efu\n"));
    assert_eq!(csv.lines().count(), 3);
    let manifest = std::fs::read_to_string(dir.path().join("out.csv.manifest.json")).unwrap();
    assert!(manifest.contains("\"seeds\""));
}

#[test]
fn output_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = cvsim(&["sweep", &cfg, "--output", "other.csv"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("other.csv").exists());
    assert!(!dir.path().join("out.csv").exists());
}

#[test]
fn invalid_config_exits_with_two_and_names_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dt = 0\nn_samples = 0\n");
    let out = cvsim(&["sweep", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dt"), "{err}");
    assert!(err.contains("n_samples"), "{err}");
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvsim(&["pde", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}model.kind = \"impact\"\n"));
    let out = cvsim(
        &["simulate", &cfg, "--eps", "0.3", "--trace", "path.csv"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert!(trace.starts_with("t,x1,x2,u_x1,u_x2,eta0\n"));
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 1002);
}

#[test]
fn simulate_rejects_bad_eps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = cvsim(
        &["simulate", &cfg, "--eps", "0", "--trace", "p.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pde_prints_the_reflected_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "model.kind = \"reflected_integral\"\n");
    let out = cvsim(&["pde", &cfg], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("value = 7.978845608028654e-1"), "{text}");
    assert!(text.contains("method = closed_form"), "{text}");
}

#[test]
fn validate_single_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvsim(
        &["validate", "--criterion", "1", "--json", "report.json"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS criterion  1"));
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"passed\": true"));
}

#[test]
fn failed_criterion_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvsim(&["validate", "--criterion", "99"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));
}
