use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn hubsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hubsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hubsim")
}

fn ok(args: &[&str]) -> String {
    let out = hubsim(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_evaluate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let (data, run, eval, rep) = (
        tmp.path().join("data"),
        tmp.path().join("run"),
        tmp.path().join("eval"),
        tmp.path().join("report"),
    );

    ok(&["generate", "-c", s(&cfg), "-o", s(&data)]);
    for f in ["groups.csv", "timetable.csv", "stop_schedules.csv", "manifest.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    ok(&["train", "-c", s(&cfg), "-o", s(&run), "--episodes", "30"]);
    let lines = fs::read_to_string(run.join("summaries.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 30);
    assert!(run.join("model.hdqn").exists());

    // A second run into the same directory needs --force.
    assert_eq!(hubsim(&["train", "-c", s(&cfg), "-o", s(&run), "--episodes", "2"]).status.code(), Some(2));

    let model = run.join("model.hdqn");
    let stats = ok(&["evaluate", "-c", s(&cfg), "-m", s(&model), "-o", s(&eval), "--episodes", "5", "--epsilon", "0"]);
    let stats: Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["episodes"], 5);

    ok(&["report", "--run", s(&run), "-o", s(&rep), "--window", "10"]);
    for f in ["reward_curve.csv", "rescheduled_timetable.csv", "satisfaction_by_train.csv", "crowd_trace.csv"] {
        assert!(rep.join(f).exists(), "{f} missing");
    }
    let curve = fs::read_to_string(rep.join("reward_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 31);
}

#[test]
fn oracle_best_sequence_replays_to_its_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let best: Value = serde_json::from_str(&ok(&["oracle", "-c", s(&cfg), "-o", s(tmp.path())])).unwrap();
    let seq: Vec<String> = best["indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.to_string())
        .collect();
    let again: Value =
        serde_json::from_str(&ok(&["oracle", "-c", s(&cfg), "-o", s(tmp.path()), "--sequence", &seq.join(",")])).unwrap();
    assert_eq!(again["value"], best["value"]);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[scenario.horizon]\nstep = 0\n").unwrap();
    let out = hubsim(&["generate", "-c", s(&bad), "-o", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&bad, "[agent]\nlearning_rat = 0.1\n").unwrap();
    assert_eq!(hubsim(&["train", "-c", s(&bad), "-o", s(tmp.path())]).status.code(), Some(2));
    let cfg = tiny_config();
    let out = hubsim(&["oracle", "-c", s(&cfg), "-o", s(tmp.path()), "--sequence", "0,9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let missing = tmp.path().join("none.hdqn");
    let out = hubsim(&["evaluate", "-c", s(&cfg), "-m", s(&missing), "-o", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let garbage = tmp.path().join("garbage.hdqn");
    fs::write(&garbage, b"not a model").unwrap();
    let out = hubsim(&["evaluate", "-c", s(&cfg), "-m", s(&garbage), "-o", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missed_transfer_target_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let run = tmp.path().join("run");
    ok(&["train", "-c", s(&cfg), "-o", s(&run), "--episodes", "10"]);

    // Raise the training satisfaction bar above anything reachable.
    let path = run.join("summaries.jsonl");
    let raised: Vec<String> = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["satisfied_fraction"] = 2.0.into();
            v.to_string()
        })
        .collect();
    fs::write(&path, raised.join("\n") + "\n").unwrap();

    let model = run.join("model.hdqn");
    let args = |out: &Path, check: bool| {
        let mut a = vec![
            "transfer".to_string(),
            "-c".into(),
            s(&cfg).into(),
            "-m".into(),
            s(&model).into(),
            "-o".into(),
            s(out).into(),
            "--episodes".into(),
            "3".into(),
            "--training-run".into(),
            s(&run).into(),
        ];
        if check {
            a.push("--check".into());
        }
        a
    };
    let run_args = |a: Vec<String>| hubsim(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(run_args(args(&tmp.path().join("t1"), false)).status.code(), Some(0));
    assert_eq!(run_args(args(&tmp.path().join("t2"), true)).status.code(), Some(3));
}
