//! End-to-end command-line tests: exit codes, run-directory layout, replay
//! determinism, and the full simulate → optimize → infer → evaluate chain.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn divskill(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divskill"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_config(dir: &Path, seed: u64) {
    fs::write(
        dir.join("config.toml"),
        format!(
            r#"
[run]
batches = 2
batch_size = 12
seed = {seed}

[pool]
file = "data/pool.json"

[executor]
noise = 0.1
"#
        ),
    )
    .unwrap();
}

#[test]
fn unknown_flag_exits_1_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let output = divskill(&["--definitely-not-a-flag"], dir.path());
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn missing_input_exits_2_naming_the_subsystem() {
    let dir = tempfile::tempdir().unwrap();
    let output = divskill(
        &[
            "evaluate",
            "--selections",
            "nope.jsonl",
            "--candidates",
            "nope.jsonl",
            "--manifest",
            "nope.jsonl",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
    assert!(stderr.contains("manifest"), "stderr: {stderr}");
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let output = divskill(&["--help"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for subcommand in [
        "optimize",
        "infer",
        "evaluate",
        "verify-greedy",
        "analyze-trajectories",
        "simulate",
    ] {
        assert!(stdout.contains(subcommand), "missing {subcommand}");
    }
}

#[test]
fn verify_greedy_reports_zero_violations() {
    let dir = tempfile::tempdir().unwrap();
    let output = divskill(
        &[
            "verify-greedy",
            "--skills",
            "6",
            "--instances",
            "20",
            "--k",
            "3",
            "--trials",
            "50",
            "--seed",
            "7",
            "--out",
            "vg/report.json",
        ],
        dir.path(),
    );
    assert_success(&output);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("vg/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
    assert_eq!(report["trials"], 50);
    assert!(report["min_ratio"].as_f64().unwrap() >= 1.0 - 1.0 / std::f64::consts::E);
}

#[test]
fn optimize_without_seed_fails_for_synthetic_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&divskill(
        &[
            "simulate",
            "--capabilities",
            "a,b",
            "--train",
            "12",
            "--holdout",
            "4",
            "--seed",
            "5",
            "--out",
            "data",
        ],
        dir.path(),
    ));
    fs::write(
        dir.path().join("config.toml"),
        r#"
[run]
batches = 1
batch_size = 6

[pool]
file = "data/pool.json"
"#,
    )
    .unwrap();
    let output = divskill(
        &[
            "optimize",
            "--config",
            "config.toml",
            "--train",
            "data/train.jsonl",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("seed"));
}

#[test]
fn full_pipeline_with_replay_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&divskill(
        &[
            "simulate",
            "--capabilities",
            "a,b,c",
            "--train",
            "36",
            "--holdout",
            "24",
            "--seed",
            "11",
            "--pool-size",
            "3",
            "--out",
            "data",
        ],
        dir.path(),
    ));
    for file in ["data/train.jsonl", "data/holdout.jsonl", "data/pool.json"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    write_config(dir.path(), 42);

    // Two optimize runs with the same config and seed replay byte-identically.
    for out in ["run_a", "run_b"] {
        assert_success(&divskill(
            &[
                "optimize",
                "--config",
                "config.toml",
                "--train",
                "data/train.jsonl",
                "--executor",
                "sim",
                "--optimizer",
                "mutate",
                "--out",
                out,
            ],
            dir.path(),
        ));
    }
    let pool_a = fs::read(dir.path().join("run_a/pool_final.json")).unwrap();
    let pool_b = fs::read(dir.path().join("run_b/pool_final.json")).unwrap();
    assert_eq!(pool_a, pool_b, "replay must be byte-identical");
    for file in [
        "run_a/config.json",
        "run_a/pool_initial.json",
        "run_a/pool_final.json",
        "run_a/outcomes.jsonl",
        "run_a/traces/batch_1.json",
        "run_a/traces/batch_2.json",
        "run_a/run_manifest.json",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }

    // A different seed changes the run (sanity check that the seed matters).
    fs::write(
        dir.path().join("override.json"),
        r#"{"run": {"seed": 43}}"#,
    )
    .unwrap();
    assert_success(&divskill(
        &[
            "optimize",
            "--config",
            "config.toml",
            "--train",
            "data/train.jsonl",
            "--out",
            "run_c",
            "--seed",
            "43",
        ],
        dir.path(),
    ));
    let trace_a = fs::read(dir.path().join("run_a/traces/batch_1.json")).unwrap();
    let trace_c = fs::read(dir.path().join("run_c/traces/batch_1.json")).unwrap();
    assert_ne!(trace_a, trace_c);

    // Inference over the holdout with the oracle judge.
    assert_success(&divskill(
        &[
            "infer",
            "--pool",
            "run_a",
            "--dataset",
            "data/holdout.jsonl",
            "--judge",
            "oracle",
            "--executor",
            "sim",
            "--seed",
            "3",
            "--out",
            "inf",
            "--override",
            r#"{"executor": {"noise": 0.1}}"#,
        ],
        dir.path(),
    ));
    let selections = fs::read_to_string(dir.path().join("inf/selections.jsonl")).unwrap();
    assert_eq!(selections.lines().count(), 24);
    let first: serde_json::Value = serde_json::from_str(selections.lines().next().unwrap()).unwrap();
    for key in ["instance_id", "winner_skill_id", "sql", "G", "win_counts"] {
        assert!(first.get(key).is_some(), "selections row missing {key}");
    }

    // Metrics report.
    assert_success(&divskill(
        &[
            "evaluate",
            "--selections",
            "inf/selections.jsonl",
            "--candidates",
            "inf/candidates.jsonl",
            "--manifest",
            "data/holdout.jsonl",
            "--out",
            "inf/report.json",
        ],
        dir.path(),
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("inf/report.json")).unwrap())
            .unwrap();
    let pass3 = report["pass_curve"]["3"].as_f64().unwrap();
    let selected = report["selected_accuracy"].as_f64().unwrap();
    assert!(pass3 >= selected, "selection cannot beat oracle coverage");
    assert!(report["pass_curve"]["1"].as_f64().unwrap() <= pass3);

    // Trajectory report from the inference run.
    assert_success(&divskill(
        &[
            "analyze-trajectories",
            "--runs",
            "inf",
            "--out",
            "inf/similarity.json",
        ],
        dir.path(),
    ));
    let similarity: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("inf/similarity.json")).unwrap())
            .unwrap();
    assert_eq!(similarity["instances"], 24);
    assert!(!similarity["pairs"].as_array().unwrap().is_empty());
}

#[test]
fn jobs_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&divskill(
        &[
            "simulate",
            "--capabilities",
            "a,b",
            "--train",
            "10",
            "--holdout",
            "10",
            "--seed",
            "2",
            "--pool-size",
            "2",
            "--out",
            "data",
        ],
        dir.path(),
    ));
    for (out, jobs) in [("one", "1"), ("four", "4")] {
        assert_success(&divskill(
            &[
                "--jobs",
                jobs,
                "infer",
                "--pool",
                "data/pool.json",
                "--dataset",
                "data/holdout.jsonl",
                "--executor",
                "sim",
                "--seed",
                "5",
                "--out",
                out,
            ],
            dir.path(),
        ));
    }
    let one = fs::read(dir.path().join("one/selections.jsonl")).unwrap();
    let four = fs::read(dir.path().join("four/selections.jsonl")).unwrap();
    assert_eq!(one, four);
}
