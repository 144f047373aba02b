use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tapa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapa")).args(args).output().unwrap()
}

fn run_e2(out: &Path) {
    let o = tapa(&["run", "--scenario", "e2", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["final_s_overall"].is_number());
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tapa(&["run", "--scenario", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scenario"));
}

#[test]
fn bad_config_file_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scenario_id":"x","adapt":{"window":-1}}"#).unwrap();
    let o = tapa(&[
        "run",
        "--scenario",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json") && err.contains("adapt.window"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tapa(&["run"]).status.code(), Some(2));
    assert_eq!(tapa(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn replay_agrees_then_flags_a_tampered_score() {
    let dir = tempfile::tempdir().unwrap();
    run_e2(dir.path());
    let store = dir.path().join("provenance.jsonl");
    let o = tapa(&["replay", "--store", store.to_str().unwrap(), "--id", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["agrees"], true);

    let text = fs::read_to_string(&store).unwrap();
    let mut rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let rate = rec["validation_results"]["success_rate"].as_str().unwrap().to_string();
    let bumped = format!("{}%", rate.trim_end_matches('%').parse::<f64>().unwrap() - 5.0);
    rec["validation_results"]["success_rate"] = bumped.into();
    fs::write(&store, format!("{rec}\n")).unwrap();
    let o = tapa(&["replay", "--store", store.to_str().unwrap(), "--id", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn replay_of_missing_store_is_a_config_error() {
    let o = tapa(&["replay", "--store", "/nonexistent/p.jsonl", "--id", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rescoring_a_frame_log_matches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    run_e2(dir.path());
    let o = tapa(&[
        "score",
        "--frames",
        dir.path().join("frames.csv").to_str().unwrap(),
        "--scenario",
        "e2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // The frame log also holds the spawn frame, which the run does not score.
    let rescored = String::from_utf8(o.stdout).unwrap();
    let mut lines: Vec<&str> = rescored.lines().collect();
    assert!(lines[1].starts_with("0,"));
    lines.remove(1);
    assert_eq!(
        lines.join("\n") + "\n",
        fs::read_to_string(dir.path().join("scores.csv")).unwrap()
    );
}

#[test]
fn ablate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = tapa(&[
        "ablate",
        "--rounds",
        "2",
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
    assert!(csv.starts_with("configuration,round_1,round_2\n"));
}
