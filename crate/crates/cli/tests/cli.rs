use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "hrl": {
    "low":  {"total_steps": 30, "learning_starts": 10, "batch_size": 4, "buffer_capacity": 32, "hidden": [4], "target_update_interval": 10},
    "high": {"total_steps": 30, "learning_starts": 10, "batch_size": 4, "buffer_capacity": 32, "hidden": [4], "target_update_interval": 10},
    "budget": 5
  },
  "sim": {"duration_s": 20}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hrl-tsch"))
        .arg("--config")
        .arg(dir.join("tiny.json"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .arg("--seed")
        .arg("3")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn full_pipeline_writes_outputs_and_manifests() {
    let dir = setup();
    let out = dir.path().join("out");
    run(dir.path(), &["train-low"]);
    assert!(out.join("bank/manifest.json").exists());
    assert!(out.join("bank/low_45_rm.json").exists());
    run(dir.path(), &["train-high"]);
    assert!(out.join("bank/high.json").exists());

    run(dir.path(), &["synthesize", "--phi", "0.5,0.3,0.2"]);
    let schedule = out.join("schedule.json");
    assert!(schedule.exists());
    assert!(out.join("node_metrics.csv").exists());

    run(dir.path(), &["simulate", "--scheduler", "file", "--schedule", schedule.to_str().unwrap(), "--trace"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sim_report.json")).unwrap()).unwrap();
    assert_eq!(report["collisions"], 0);
    assert!(out.join("trace.csv").exists());

    run(dir.path(), &["simulate", "--scheduler", "shared-cell", "--slotframe", "3"]);
    run(dir.path(), &["compare", "--schedule", schedule.to_str().unwrap()]);
    assert!(out.join("deviations.csv").exists());

    run(dir.path(), &["sweep", "--step", "0.5"]);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 6);

    for cmd in ["train-low", "train-high", "synthesize", "simulate", "sweep", "compare"] {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("{cmd}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["seed"], 3);
        assert_eq!(m["command"], cmd);
        assert!(m["config_hash"].as_str().unwrap().len() >= 16);
    }
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let dir = setup();
    let out = dir.path().join("out");
    run(dir.path(), &["train-low"]);
    run(dir.path(), &["train-high"]);
    run(dir.path(), &["sweep", "--step", "0.5"]);
    let first = fs::read(out.join("sweep.csv")).unwrap();
    run(dir.path(), &["--jobs", "2", "sweep", "--step", "0.5"]);
    assert_eq!(first, fs::read(out.join("sweep.csv")).unwrap());
}

#[test]
fn rank_orders_table() {
    let dir = setup();
    let table = dir.path().join("table.csv");
    fs::write(
        &table,
        "protocol,power_mw,delay_ms,throughput_pps,plr\nlearned,1.8,400,1.0,0.0\nshared-cell,4.4,900,0.1,0.9\n",
    )
    .unwrap();
    run(dir.path(), &["rank", "--table", table.to_str().unwrap(), "--weights", "w_p"]);
    let ranking = fs::read_to_string(dir.path().join("out/ranking.csv")).unwrap();
    let first = ranking.lines().nth(1).unwrap();
    assert!(first.contains("learned"), "{ranking}");
}

#[test]
fn missing_bank_is_a_startup_error() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_hrl-tsch"))
        .args(["--out-dir", dir.path().join("out").to_str().unwrap(), "synthesize", "--phi", "0.5,0.3,0.2"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn invalid_phi_is_rejected() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_hrl-tsch"))
        .args(["--out-dir", dir.path().join("out").to_str().unwrap(), "synthesize", "--phi", "0.9,0.9,0.1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
