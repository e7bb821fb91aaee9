use std::fs;
use std::process::Command;

use esd_core::gridscene::{generate_scene, SceneGenConfig};

fn esd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esd"))
}

const SMOKE: &str = r#"
seed = 5
scenes_per_type = 3
demos_per_scene = 4
rl_iterations = 1
starts_per_scene = 2

[split]
train = 1
validation = 1
test = 1

[il]
epochs = 2
"#;

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    fs::write(&cfg, SMOKE).unwrap();
    let out_dir = dir.path().join("run");
    let out = esd()
        .args(["--config", cfg.to_str().unwrap(), "run", "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("reports/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn render_prints_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    let scene = generate_scene(&SceneGenConfig::default(), 3).unwrap();
    fs::write(&path, scene.to_json()).unwrap();
    let out = esd().args(["render", "--scene", path.to_str().unwrap(), "--heat"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("scene 3 "));
    assert!(text.contains('#'));
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "scenes_per_type = 3\nnot_a_field = 1\n").unwrap();
    let out = esd().args(["--config", cfg.to_str().unwrap(), "run", "--dry-run", "--out", "unused"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
