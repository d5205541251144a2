use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn uavnet(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavnet"))
        .args(args)
        .env("UAVNET_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn validate_accepts_shipped_configs() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["desk_trajectory.toml", "caching_sweep.toml", "trace_playback.toml"] {
        let cfg = configs().join(name);
        let o = uavnet(tmp.path(), &["validate", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", text(&o));
    }
}

#[test]
fn validate_reports_every_violation_with_exit_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(
        &cfg,
        "[experiment]\nname = \"bad\"\n[channel]\nbandwidth = -1.0\n[trajectory]\n[caching]\n",
    )
    .unwrap();
    let o = uavnet(tmp.path(), &["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let out = text(&o);
    assert!(out.contains("channel.bandwidth"), "{out}");
    assert!(out.contains("mutually exclusive"), "{out}");
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("typo.toml");
    fs::write(&cfg, "[experiment]\nname = \"t\"\nseeds = [0]\nworkerz = 2\n[trajectory]\n").unwrap();
    let o = uavnet(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("workerz"), "{}", text(&o));

    let missing = tmp.path().join("nope.toml");
    let o = uavnet(tmp.path(), &["validate", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_then_export_geojson() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("quick_trajectory.toml");
    let o = uavnet(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--seeds", "4", "--workers", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let dir = tmp.path().join("quick-trajectory");
    assert!(dir.join("summary.csv").exists());
    let manifest = dir.join("seed-4").join("manifest.json");
    assert!(manifest.exists());

    let out = tmp.path().join("track.geojson");
    let o = uavnet(
        tmp.path(),
        &[
            "export-geojson",
            "--run",
            manifest.to_str().unwrap(),
            "--anchor",
            "-33.86,151.21",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["type"], "FeatureCollection");
}

#[test]
fn export_of_missing_run_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("seed-0").join("manifest.json");
    let o = uavnet(tmp.path(), &["export-geojson", "--run", manifest.to_str().unwrap(), "--anchor", "0,0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_root_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = configs().join("quick_trajectory.toml");
    let o = uavnet(&blocker, &["simulate", "--config", cfg.to_str().unwrap(), "--seeds", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn bad_anchor_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = uavnet(tmp.path(), &["export-geojson", "--run", "m.json", "--anchor", "95,0"]);
    assert!(!o.status.success());
}
