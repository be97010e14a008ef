use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brinkman-dg"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn solve_subcommand_writes_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "solve", "geometry": {"kind": "square-with-box", "n": 8}, "kappa": 1000}"#,
    );
    let out = dir.path().join("out");
    let status = bin()
        .args(["--threads", "1", "solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("index,re_lambda,im_lambda,residual,classification"));
    assert!(csv.lines().count() > 4);
}

#[test]
fn adapt_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "adapt", "geometry": {"kind": "lshape-chessboard", "n": 4}, "kappa": 1000,
            "adapt": {"max_iterations": 3, "reference": {"kind": "value", "value": 140.0}}}"#,
    );
    let out = dir.path().join("out");
    let r = bin().args(["adapt", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 4);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "solve", "geometry": {"kind": "square", "n": 4}, "epsilon": 3}"#,
    );
    let r = bin().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    let r = bin().args(["sweep", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    let ok = write_config(dir.path(), r#"{"experiment": "solve", "geometry": {"kind": "square", "n": 4}}"#);
    let r = bin().args(["adapt", "--config"]).arg(&ok).output().unwrap();
    assert_eq!(r.status.code(), Some(2), "experiment mismatch");
    let r = bin().args(["check", "--only", "42"]).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    let r = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn check_subcommand_runs_structural_suite() {
    let r = bin().args(["check", "--only", "9"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(r.status.success(), "{stdout}");
    assert!(stdout.starts_with("PASS [9]"));
}
