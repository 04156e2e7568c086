use std::path::Path;
use std::process::{Command, Output};

fn lyapkit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapkit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["reproduce", "ex99"][..],
        &["simulate", "--model", "scalar:v"],
        &["verify", "--model", "linear:-1", "--alpha", "cubic:1"],
        &["run"],
    ] {
        let o = lyapkit(args, dir.path());
        assert_eq!(o.status.code(), Some(64), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = lyapkit(&["simulate", "--model", "linear:-1", "--x0", "1", "--horizon", "1", "--step", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let x: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((x - (-1f64).exp()).abs() < 1e-9, "{last}");
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn refuting_probe_exits_2_and_witness_replays() {
    let dir = tempfile::tempdir().unwrap();
    let o = lyapkit(&["probe", "--model", "scalar:ii", "--notion", "RFC"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    let witness = dir.path().join("witness_1.json");
    assert!(witness.exists());
    let replay = tempfile::tempdir().unwrap();
    let o = lyapkit(&["simulate", "--model", "scalar:ii", "--witness", witness.to_str().unwrap()], replay.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"model": "linear", "matrix": [[-1.0]]}, "task": {"kind": "verify", "alpha": {"kind": "quadratic", "c": 2.0}}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = lyapkit(&["run", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("decay.csv").exists());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["task"]["kind"], "verify");
    let o = lyapkit(&["probe", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn reproduce_switched_matches() {
    let dir = tempfile::tempdir().unwrap();
    let o = lyapkit(&["reproduce", "switched"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["switched_fit.csv", "switched_envelope_common.csv", "switched_witness_unstable.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
