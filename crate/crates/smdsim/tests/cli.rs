//! End-to-end checks of the command-line surface: run/report/log files, the
//! offline audit path, report comparison, and the generators.

use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smdsim"))
}

const CONFIG: &str = r#"{
  "geometry": {"channels": 1, "ranks_per_channel": 1, "bankgroups_per_chip": 2,
               "banks_per_group": 2, "rows_per_bank": 65536},
  "time_scale": 8,
  "mode": "smd",
  "mechanisms": [{"kind": "fixed-refresh"}],
  "run": {"until": "cycles", "n": 60000},
  "traces": [{"source": "random", "len": 2000, "seed": 5,
              "footprint": 67108864, "bubbles": 6, "write_fraction": 0.2}]
}"#;

#[test]
fn run_audit_compare_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let report = dir.path().join("report.json");
    let log = dir.path().join("events.csv");
    fs::write(&config, CONFIG).unwrap();

    let status = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&report)
        .arg("--log")
        .arg(&log)
        .status()
        .unwrap();
    assert!(status.success());
    let report_text = fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("event_hash"));
    assert!(fs::read_to_string(&log).unwrap().starts_with("cycle,kind"));

    // Replaying the recorded log through the offline auditors passes.
    let status = bin()
        .args(["audit", "--log"])
        .arg(&log)
        .arg("--config")
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());

    // A run compared against itself: normalized speedup 1.0, zero deltas.
    let out = bin()
        .args(["compare", "--baseline"])
        .arg(&report)
        .arg("--candidate")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success());
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cmp["normalized_speedup"], 1.0);
    assert_eq!(cmp["weighted_speedup"], 1.0); // one core
    assert_eq!(cmp["energy_delta_nj"], 0.0);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"mode": "smd", "time_scale": 0}"#).unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn generated_hammer_trace_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("hammer.trace");
    let status = bin()
        .args([
            "gen-trace",
            "hammer",
            "--pattern",
            "double-sided",
            "--aggressors",
            "300,302",
            "--len",
            "500",
        ])
        .arg("--out")
        .arg(&trace)
        .status()
        .unwrap();
    assert!(status.success());

    let config = dir.path().join("config.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "mode": "smd",
  "time_scale": 8,
  "mechanisms": [{{"kind": "det-rh"}}],
  "run": {{"until": "trace-once"}},
  "traces": [{{"source": "file", "path": {path:?}}}],
  "audits": {{"timing": true, "exclusion": true, "refresh": false,
              "rowhammer": true, "scrub": false, "retry": true,
              "retry_slack": 8, "rowhammer_act_max": null}}
}}"#,
            path = trace.to_string_lossy()
        ),
    )
    .unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn failed_audit_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    // Hammering with no protection, audited against a hard budget.
    fs::write(
        &config,
        r#"{
  "mode": "smd",
  "time_scale": 8,
  "run": {"until": "trace-once"},
  "traces": [{"source": "hammer", "pattern": "double-sided",
              "aggressors": [300, 302], "len": 40000}],
  "audits": {"timing": true, "exclusion": true, "refresh": false,
             "rowhammer": true, "scrub": false, "retry": true,
             "retry_slack": 8, "rowhammer_act_max": 512}
}"#,
    )
    .unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
