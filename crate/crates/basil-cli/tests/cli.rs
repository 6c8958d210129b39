use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CAMPAIGN: &str = r#"
clients = 6
duration = 400
byz_client_frac = 0.34
byz_replicas_per_shard = 1

[workload]
kind = "rw-zipf"
keys = 40

[matrix]
seeds = 3
jobs = 2

[[matrix.adversaries]]
name = "stall"
byz_client_behaviors = ["stall-early", "stall-late"]
byz_replica_behaviors = ["mute"]

[[matrix.adversaries]]
name = "equiv"
byz_client_behaviors = ["equiv-real"]
byz_replica_behaviors = ["vote-flip"]
"#;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basil-sim")).args(args).output().expect("binary runs")
}

fn campaign(dir: &Path) -> Output {
    let cfg = dir.join("campaign.toml");
    fs::write(&cfg, CAMPAIGN).unwrap();
    let out = dir.join("out");
    sim(&["campaign", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn run_dirs(out: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn campaign_writes_every_run_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = campaign(a.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let dirs = run_dirs(&a.path().join("out"));
    assert_eq!(
        dirs,
        ["equiv-rw-zipf-s0001", "equiv-rw-zipf-s0002", "equiv-rw-zipf-s0003", "stall-rw-zipf-s0001", "stall-rw-zipf-s0002", "stall-rw-zipf-s0003"]
    );
    let summary = fs::read_to_string(a.path().join("out/summary")).unwrap();
    assert!(dirs.iter().all(|d| summary.contains(d.as_str())));
    assert_eq!(String::from_utf8_lossy(&first.stdout), summary);

    assert_eq!(campaign(b.path()).status.code(), Some(0));
    for d in &dirs {
        for f in ["history.log", "metrics", "verdict"] {
            let p = format!("out/{d}/{f}");
            assert_eq!(fs::read(a.path().join(&p)).unwrap(), fs::read(b.path().join(&p)).unwrap(), "{p} differs");
        }
    }
    assert_eq!(fs::read(a.path().join("out/summary")).unwrap(), fs::read(b.path().join("out/summary")).unwrap());

    let report = sim(&["report", a.path().join("out").to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&report.stdout), summary);
}

#[test]
fn run_then_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let run = sim(&["run", "--seed", "4", "--duration", "300", "--out", out, "--run-id", "one"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let log = tmp.path().join("one/history.log");
    let verdict_path = tmp.path().join("again");
    let v = sim(&["verify", log.to_str().unwrap(), "--out", verdict_path.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));
    // Offline verification reproduces the verdict written by the run.
    assert_eq!(fs::read(tmp.path().join("one/verdict")).unwrap(), fs::read(&verdict_path).unwrap());
}

#[test]
fn failed_verification_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(sim(&["run", "--seed", "2", "--duration", "300", "--out", out]).status.code(), Some(0));
    let log = tmp.path().join("seed-2/history.log");
    let text = fs::read_to_string(&log).unwrap();
    // Claim a decision for a transaction nobody certified.
    let line = text.lines().find(|l| l.contains("\"decision_reported\"")).expect("a decision");
    let mut rec: serde_json::Value = serde_json::from_str(line).unwrap();
    rec["ev"]["txn_id"] = serde_json::Value::String("00".repeat(32));
    fs::write(&log, format!("{text}{rec}\n")).unwrap();
    assert_eq!(sim(&["verify", log.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn usage_and_run_errors() {
    assert_eq!(sim(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(sim(&["run", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(1));
    assert_eq!(sim(&["run", "--byz-behavior", "teleport"]).status.code(), Some(1));
    assert_eq!(sim(&["run", "--keys", "0"]).status.code(), Some(1));
    assert_eq!(sim(&["verify", "/nonexistent/history.log"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.log");
    fs::write(&bad, "not json\n").unwrap();
    assert_eq!(sim(&["verify", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(sim(&["report", tmp.path().to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(sim(&["--help"]).status.code(), Some(0));
}
