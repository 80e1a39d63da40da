use std::path::Path;
use std::process::{Command, Output};

fn epimix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epimix")).current_dir(dir).args(args).output().unwrap()
}

fn report(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON report ({e}): {stderr}"))
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nsede = 2\n").unwrap();
    std::fs::write(dir.path().join("synth.json"), r#"{"areas": [{"id": "a"}]}"#).unwrap();
    let out = epimix(dir.path(), &["--config", "bad.toml", "synth", "--spec", "synth.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["error"], "config");
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("synth.json"), r#"{"areas": [{"id": "a"}]}"#).unwrap();
    let out = epimix(dir.path(), &["synth", "--spec", "synth.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["exit_code"], 2);
}

#[test]
fn bad_arguments_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(epimix(dir.path(), &["fit"]).status.code(), Some(2));
    assert_eq!(epimix(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn malformed_anc_row_is_a_data_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("anc.csv"),
        "area,clinic,year,pos,tested\na,c1,1990,3,100\na,c1,1991,300,100\n",
    )
    .unwrap();
    let out = epimix(dir.path(), &["--seed", "1", "fit", "--anc", "anc.csv"]);
    assert_eq!(out.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["error"], "data");
    assert!(r["message"].as_str().unwrap().contains("line 3"), "{r}");
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = epimix(dir.path(), &["--seed", "1", "fit", "--anc", "nope.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn diverging_projection_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("theta.json"),
        r#"{"t0": 1975, "t1": 20, "log_r0": 0.4, "beta0": 0.5, "beta1": -400.0, "beta2": 0.0, "beta3": 0.0, "beta4": 0.1}"#,
    )
    .unwrap();
    let out = epimix(dir.path(), &["project", "--theta", "theta.json"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["error"], "numerical");
}

#[test]
fn project_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("theta.json"),
        r#"{"t0": 1980, "t1": 20, "log_r0": 0.42, "beta0": 0.46, "beta1": 0.17, "beta2": -0.68, "beta3": -0.038, "beta4": 0.14}"#,
    )
    .unwrap();
    let out = epimix(dir.path(), &["project", "--theta", "theta.json", "--end", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 31);
}
