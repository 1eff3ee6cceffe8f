use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn hexgait(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hexgait"))
        .current_dir(dir)
        .env_remove("HEXGAIT_SERVER")
        .env("HEXGAIT_ROBOT", root().join("configs/hexapod.toml"))
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const COARSE: &[&str] = &["--delta-alpha", "15", "--h-min", "0", "--h-max", "0"];

#[test]
fn validate_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = hexgait(dir.path(), &["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["legs"].as_array().unwrap().len(), 6);
    assert!(v["gaits"].as_array().unwrap().iter().any(|g| g == "tripod"));
}

#[test]
fn invalid_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "legs = 3").unwrap();
    assert_eq!(hexgait(dir.path(), &["--robot", "bad.toml", "validate"]).status.code(), Some(1));
    assert_eq!(hexgait(dir.path(), &["--robot", "missing.toml", "validate"]).status.code(), Some(1));
    assert_eq!(hexgait(dir.path(), &["--tick-rate", "0", "trajectory"]).status.code(), Some(1));
    assert_eq!(hexgait(dir.path(), &["trajectory", "--gait", "moonwalk"]).status.code(), Some(1));
    std::fs::write(dir.path().join("s.txt"), "t=0 hover\n").unwrap();
    assert_eq!(hexgait(dir.path(), &["run", "s.txt"]).status.code(), Some(1));
    assert_eq!(hexgait(dir.path(), &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(hexgait(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_server_exits_two() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let o = hexgait(dir.path(), &["--server", &format!("http://127.0.0.1:{port}"), "validate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn workspace_writes_csv_and_uses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--cache", "cache", "workspace"];
    args.extend_from_slice(COARSE);
    let first = hexgait(dir.path(), &args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let v: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["cache_hit"], false);
    assert!(v["walkspace_vertices"].as_u64().unwrap() >= 3);
    let csvs: Vec<_> = std::fs::read_dir(dir.path().join("out")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(!csvs.is_empty());
    let again: serde_json::Value = serde_json::from_slice(&hexgait(dir.path(), &args).stdout).unwrap();
    assert_eq!(again["cache_hit"], true);
}

#[test]
fn run_script_from_configs() {
    let dir = tempfile::tempdir().unwrap();
    let script = root().join("configs/scripts/walk.txt");
    let mut args = vec!["--out", "res", "run", script.to_str().unwrap()];
    args.extend_from_slice(COARSE);
    let o = hexgait(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary.is_object());
    assert!(dir.path().join("res").read_dir().unwrap().count() > 0);
}
