use std::fs;
use std::process::Command;

fn mflab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mflab"))
}

#[test]
fn validate_prints_canonical_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"experiment": "decay", "seed": 3}"#).unwrap();
    let out = mflab().arg("validate").arg(&path).arg("--strict").output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["experiment"], "decay");
    assert_eq!(v["seed"], 3);
    assert!(v["n_values"].is_array());
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"experiment": "rate", "seed": 1, "n_values": [16, 0]}"#).unwrap();
    let out = mflab().arg("run").arg(&path).arg("-o").arg(dir.path().join("run")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_values[1]"));
}

#[test]
fn run_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(
        &path,
        r#"{"experiment": "decay", "seed": 5, "n_values": [4], "replicates": 4}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = mflab().arg("run").arg(&path).arg("-o").arg(&run).args(["--workers", "2"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("[PASS] first_order_rate_theta"));
    assert!(run.join("report.json").exists());
    fs::remove_dir_all(run.join("plots")).unwrap();
    let out = mflab().arg("plot").arg(&run).output().unwrap();
    assert!(out.status.success());
    assert!(run.join("plots").read_dir().unwrap().count() > 0);
}

#[test]
fn check_assumptions_reports_failing_hypotheses() {
    let out = mflab()
        .args(["check-assumptions", "mean_field_ou", "theta=1", "gamma=0.05", "sigma=1", "--json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
}
