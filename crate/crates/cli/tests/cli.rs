//! End-to-end checks of the `preact` binary: exit codes and the
//! run -> eval -> harvest-bank -> report pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use preact_core::agent::template;
use preact_core::llm::{Matcher, ScriptedPolicy};
use preact_core::{EnvFamily, Framework, PredictedOutcome};

fn preact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_preact"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("binary exits normally")
}

/// Follows the lettuce oracle keyed purely on environment feedback, so it
/// succeeds under any retention mode.
fn oracle_policy() -> ScriptedPolicy {
    let preact = template(EnvFamily::Hh, Framework::PreAct).unwrap();
    let turn = |thought: &str, action: &str| {
        preact.render_assistant(
            thought,
            action,
            &[PredictedOutcome::new("The step works out.", "Continue with the plan.")],
        )
    };
    ScriptedPolicy::with_default(turn("Start at the sidetable.", "go to sidetable 1"))
        .rule(
            Matcher::Contains("You arrive at diningtable 1".into()),
            turn("Deliver it.", "put lettuce 1 in/on diningtable 1"),
        )
        .rule(
            Matcher::Contains("You pick up the lettuce 1".into()),
            turn("Carry it over.", "go to diningtable 1"),
        )
        .rule(
            Matcher::Contains("You arrive at sidetable 1".into()),
            turn("Grab it.", "take lettuce 1 from sidetable 1"),
        )
}

fn judge_policy() -> ScriptedPolicy {
    ScriptedPolicy::with_default("Thought: close to the reference.\nLast Round Replan Score: 2")
        .rule(
            Matcher::Contains("[BEGIN OF ONE TRAJECTORY]".into()),
            "Thought: the runs differ.\nScore 1: 60\nScore 2: 50",
        )
}

fn write_policy(path: &Path, policy: &ScriptedPolicy) {
    fs::write(path, serde_json::to_string_pretty(policy).unwrap()).unwrap();
}

#[test]
fn pipeline_runs_end_to_end_with_exit_zero() {
    let root = tempfile::tempdir().unwrap();
    let policy_path = root.path().join("policy.json");
    let judge_path = root.path().join("judge.json");
    write_policy(&policy_path, &oracle_policy());
    write_policy(&judge_path, &judge_policy());
    let out_dir = root.path().join("out");
    let eval_dir = root.path().join("eval");
    let bank_path = root.path().join("bank.jsonl");

    let run = preact(&[
        "run",
        "--instances",
        "hh/trap-lettuce",
        "--frameworks",
        "preact",
        "--modes",
        "all",
        "--seeds",
        "0",
        "--scripted",
        policy_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert_eq!(code(&run), 0, "run failed: {stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("cells: 1 done, 0 failed, 0 skipped, 0 incompatible"));
    assert!(out_dir.join("manifest.json").is_file());

    let eval = preact(&[
        "eval",
        out_dir.to_str().unwrap(),
        "--judge",
        judge_path.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&eval), 0, "eval failed: {}", String::from_utf8_lossy(&eval.stderr));
    assert!(eval_dir.join("report.jsonl").is_file());
    assert!(eval_dir.join("table.txt").is_file());

    let harvest = preact(&[
        "harvest-bank",
        out_dir.to_str().unwrap(),
        "--out",
        bank_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&harvest), 0);
    let bank_text = fs::read_to_string(&bank_path).unwrap();
    assert_eq!(bank_text.lines().count(), 4, "one bank entry per recorded turn");

    let report = preact(&["report", eval_dir.join("report.jsonl").to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("hh"));
}

#[test]
fn validation_problems_exit_one() {
    let missing_backend = preact(&["run", "--instances", "hh/trap-lettuce"]);
    assert_eq!(code(&missing_backend), 1);
    assert!(!String::from_utf8_lossy(&missing_backend.stderr).is_empty());

    let missing_input = preact(&["eval", "/nonexistent/trajectories"]);
    assert_eq!(code(&missing_input), 1);

    let bad_flag = preact(&["run", "--no-such-flag"]);
    assert_eq!(code(&bad_flag), 1);

    let help = preact(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("ablate-retention"));
}

#[test]
fn exhausted_budget_exits_two_and_marks_cells() {
    let root = tempfile::tempdir().unwrap();
    let policy_path = root.path().join("policy.json");
    write_policy(&policy_path, &oracle_policy());
    let out_dir = root.path().join("out");

    let run = preact(&[
        "run",
        "--instances",
        "hh/trap-lettuce,hh/trap-mug",
        "--frameworks",
        "preact",
        "--modes",
        "all",
        "--seeds",
        "0",
        "--budget",
        "1",
        "--scripted",
        policy_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 2, "partial batch must exit 2");
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("skipped"), "manifest should mark starved cells: {manifest}");
}
