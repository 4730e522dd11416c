use std::fs;
use std::process::{Command, Output};

fn loralab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loralab")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let o = loralab(&["--config", "/nonexistent/cfg.json", "train-victim"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/cfg.json"), "{}", stderr(&o));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"budgetz": [100]}"#).unwrap();
    let o = loralab(&["--config", cfg.to_str().unwrap(), "attack"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("budgetz"), "{}", stderr(&o));
}

#[test]
fn report_without_outputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = loralab(&["--out", dir.path().to_str().unwrap(), "report"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no outputs"), "{}", stderr(&o));
}

#[test]
fn train_victim_writes_checkpoint_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = loralab(&["--out", dir.path().to_str().unwrap(), "train-victim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed_dir = fs::read_dir(dir.path().join("default/train-victim"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .expect("a per-seed directory");
    assert!(seed_dir.join("checkpoint.json").is_file());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(seed_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["test_accuracy"].as_f64().unwrap() >= 95.0);
}

#[test]
fn bad_label_mode_is_a_usage_error() {
    let o = loralab(&["--label-mode", "fuzzy", "attack"]);
    assert!(!o.status.success());
}
