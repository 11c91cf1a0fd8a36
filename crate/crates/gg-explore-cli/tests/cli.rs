//! CLI behavior: subcommand output, exit codes, and determinism.

mod common;

use std::process::{Command, Output};

use common::{binary, fixtures_dir};

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn kg_arg() -> String {
    fixtures_dir().join("movies.tsv").display().to_string()
}

fn transcript_arg() -> String {
    fixtures_dir().join("transcript.json").display().to_string()
}

#[test]
fn kg_stats_prints_counts() {
    let output = run(&["kg", "stats", "--kg", &kg_arg()]);
    assert!(output.status.success());
    assert_eq!(
        String::from_utf8_lossy(&output.stdout),
        "entities=12 relations=5 triples=11\n"
    );
}

#[test]
fn kg_stats_emits_json_on_demand() {
    let output = run(&["kg", "stats", "--kg", &kg_arg(), "--out", "-"]);
    assert!(output.status.success());
    let value: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(value["entities"], 12);
    assert_eq!(value["relations"], 5);
    assert_eq!(value["triples"], 11);
}

#[test]
fn kg_stats_missing_file_exits_2_naming_path() {
    let output = run(&["kg", "stats", "--kg", "/nope/graph.tsv"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("/nope/graph.tsv"));
}

#[test]
fn ask_answers_the_fixture_question() {
    let output = run(&[
        "ask",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--id",
        "q1",
        "--question",
        "Which film directed by Christopher Nolan stars Leonardo DiCaprio?",
        "--gold",
        "Inception",
    ]);
    assert!(output.status.success());
    let record: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(record["predicted"], serde_json::json!(["Inception"]));
    assert_eq!(record["outcome"], "grounded");
    assert_eq!(record["partial"], 1);
    assert_eq!(record["cost"]["llm_calls"], 5);
}

#[test]
fn ask_is_byte_deterministic() {
    let args = [
        "ask",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--id",
        "q2",
        "--question",
        "Where was Christopher Nolan born?",
        "--gold",
        "London",
    ];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn ask_without_gold_reports_zero_scores() {
    let output = run(&[
        "ask",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--id",
        "q3",
        "--question",
        "When was the film Inception released?",
    ]);
    assert!(output.status.success());
    let record: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(record["predicted"], serde_json::json!(["2010"]));
    assert_eq!(record["partial"], 0);
    assert_eq!(record["complete"], 0);
}

#[test]
fn ask_with_trace_keeps_stdout_pure_json() {
    let output = run(&[
        "ask",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--id",
        "q2",
        "--question",
        "Where was Christopher Nolan born?",
        "--trace",
    ]);
    assert!(output.status.success());
    serde_json::from_slice::<serde_json::Value>(&output.stdout).expect("stdout is one JSON doc");
    let stderr = String::from_utf8_lossy(&output.stderr);
    let mut events = 0;
    for line in stderr.lines() {
        let event: serde_json::Value = serde_json::from_str(line).expect("trace line is JSON");
        assert!(event["event"].is_string());
        events += 1;
    }
    assert!(events >= 3, "expected several trace events, got {events}");
}

#[test]
fn bench_missing_dataset_exits_2_naming_path() {
    let output = run(&[
        "bench",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--dataset",
        "/nope/questions.jsonl",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("/nope/questions.jsonl"));
}

#[test]
fn scripted_provider_requires_transcript() {
    let output = run(&[
        "ask",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--question",
        "anything",
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("--transcript"));
}

#[test]
fn http_provider_requires_env() {
    let output = Command::new(binary())
        .args(["gg", "build", "--provider", "http", "--question", "anything"])
        .env_remove("GG_LLM_BASE_URL")
        .env_remove("GG_LLM_MODEL")
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("GG_LLM_BASE_URL"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let output = run(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let output = run(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("bench"));
}

#[test]
fn gg_build_reports_graph_and_findings() {
    let output = run(&[
        "gg",
        "build",
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--id",
        "q1",
        "--question",
        "Which film directed by Christopher Nolan stars Leonardo DiCaprio?",
    ]);
    assert!(output.status.success());
    let value: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(value["nodes"].as_array().unwrap().len(), 3);
    assert_eq!(value["edges"].as_array().unwrap().len(), 2);
    assert_eq!(value["findings"], serde_json::json!([]));
    assert_eq!(value["cost"]["llm_calls"], 3);
    assert_eq!(
        value["statement"],
        "A film directed by Christopher Nolan stars Leonardo DiCaprio."
    );
}

#[test]
fn exhausted_transcript_is_a_provider_error_for_gg_build() {
    // q1's transcript is fine, but an unknown id has no entries at all.
    let output = run(&[
        "gg",
        "build",
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--id",
        "unknown",
        "--question",
        "Where was Christopher Nolan born?",
    ]);
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("transcript exhausted"));
}

#[test]
fn bench_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = run(&[
        "bench",
        "--kg",
        &kg_arg(),
        "--provider",
        "scripted",
        "--transcript",
        &transcript_arg(),
        "--dataset",
        &fixtures_dir().join("questions.jsonl").display().to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(output.stdout.is_empty(), "report goes to the file, not stdout");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["aggregates"]["partial_rate"], 100.0);
    assert_eq!(report["records"].as_array().unwrap().len(), 5);
}
