use std::path::Path;
use std::process::{Command, Output};

fn hashguard(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hashguard"));
    cmd.args(args);
    for (key, rel) in [("paths.model_dir", "models"), ("paths.report_dir", "reports"), ("paths.template_store", "templates.ndjson")] {
        cmd.arg("--set").arg(format!("{key}={}", dir.join(rel).display()));
    }
    for fast in ["training.stage1.epochs=5", "training.nnd.epochs=1", "training.joint.epochs=1", "augment.sigma=0"] {
        cmd.args(["--set", fast]);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bch_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hashguard(dir.path(), &["bch-check"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("121/121 error patterns per message corrected"));
}

#[test]
fn version_reports_formats() {
    let o = Command::new(env!("CARGO_BIN_EXE_hashguard")).arg("--version").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("pipeline format 1"));
}

#[test]
fn eval_without_model_is_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let o = hashguard(dir.path(), &["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("finetune"));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hashguard(dir.path(), &["synth", "--set", "code=\"bch99_1\""]).status.code(), Some(1));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(hashguard(dir.path(), &["synth", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn stages_enroll_and_authenticate() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["synth", "train-dh", "gen-gt", "train-nnd", "finetune"] {
        let o = hashguard(dir.path(), &[stage]);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let enroll = ["enroll", "--subject", "subject-000"];
    assert_eq!(hashguard(dir.path(), &enroll).status.code(), Some(0));
    assert_eq!(hashguard(dir.path(), &enroll).status.code(), Some(1));
    assert_eq!(hashguard(dir.path(), &["enroll", "--subject", "subject-000", "--reenroll"]).status.code(), Some(0));

    let o = hashguard(dir.path(), &["auth", "--subject", "subject-000", "--sample", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "score 1.000 ACCEPT");

    let o = hashguard(dir.path(), &["auth", "--subject", "subject-005", "--claim", "subject-000"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("REJECT"));

    let store = std::fs::read_to_string(dir.path().join("templates.ndjson")).unwrap();
    assert_eq!(store.lines().count(), 1);
}
