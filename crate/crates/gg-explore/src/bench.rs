//! End-to-end question answering and benchmark reporting.
//!
//! [`answer_question`] runs the full pipeline for one question: guidance
//! graph construction, exploration, and either a knowledge-grounded final
//! answer or the direct-answer fallback. [`run_benchmark`] maps it over a
//! dataset with bounded parallelism and aggregates partial/complete match
//! rates plus mean LLM call and token costs.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{self, ExplorationOutcome, ExplorationTrace, ExplorerConfig, FallbackReason};
use crate::gateway::{CostLedger, GatewayError, LlmGateway};
use crate::guidance::{self, ConstructError};
use crate::kg::{normalize_name, KnowledgeGraph};

/// One dataset entry: a question with its gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// Dataset loading failures.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Loads a JSON Lines dataset: one `{"id", "question", "answers"}` object
/// per line. Ids must be unique and answer lists non-empty.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAExample>, BenchError> {
    let path = path.as_ref();
    let label = path.display().to_string();
    let file = File::open(path).map_err(|source| BenchError::Io {
        path: label.clone(),
        source,
    })?;
    let mut seen = BTreeSet::new();
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| BenchError::Io {
            path: label.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let example: QAExample =
            serde_json::from_str(&line).map_err(|e| BenchError::Format {
                path: label.clone(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if example.id.trim().is_empty() {
            return Err(BenchError::Format {
                path: label.clone(),
                line: line_no,
                reason: "empty id".to_string(),
            });
        }
        if example.answers.is_empty() {
            return Err(BenchError::Format {
                path: label.clone(),
                line: line_no,
                reason: format!("question {} has no gold answers", example.id),
            });
        }
        if !seen.insert(example.id.clone()) {
            return Err(BenchError::Format {
                path: label.clone(),
                line: line_no,
                reason: format!("duplicate id {}", example.id),
            });
        }
        examples.push(example);
    }
    Ok(examples)
}

/// Scores a prediction: `partial` when at least one gold answer was
/// retrieved, `complete` when all of them were. Strings are compared under
/// name normalization. An empty gold set scores (0, 0).
pub fn score(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> (u8, u8) {
    let predicted: BTreeSet<String> = predicted.iter().map(|s| normalize_name(s)).collect();
    let gold: BTreeSet<String> = gold.iter().map(|s| normalize_name(s)).collect();
    if gold.is_empty() {
        return (0, 0);
    }
    let partial = u8::from(!predicted.is_disjoint(&gold));
    let complete = u8::from(gold.is_subset(&predicted));
    (partial, complete)
}

/// Pipeline switches for a run.
#[derive(Debug, Clone, Default)]
pub struct BenchConfig {
    pub explorer: ExplorerConfig,
    /// Answer directly with the LLM when grounding falls back.
    pub fallback: bool,
    /// Worker threads for `run_benchmark`; 0 and 1 both mean sequential.
    pub jobs: usize,
}

impl BenchConfig {
    pub fn with_fallback() -> Self {
        BenchConfig {
            fallback: true,
            jobs: 1,
            ..BenchConfig::default()
        }
    }
}

/// Outcome of one question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    pub outcome: String,
    pub predicted: Vec<String>,
    pub partial: u8,
    pub complete: u8,
    pub cost: CostLedger,
    pub error: Option<String>,
}

/// Exact aggregates over a run's records. Rates are percentages rounded to
/// one decimal place; means are exact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub partial_rate: f64,
    pub complete_rate: f64,
    pub mean_llm_calls: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_total_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: Vec<PredictionRecord>,
    pub aggregates: Aggregates,
}

impl BenchReport {
    pub fn to_json_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn aggregate(records: &[PredictionRecord]) -> Aggregates {
    let n = records.len() as f64;
    let partial: u64 = records.iter().map(|r| u64::from(r.partial)).sum();
    let complete: u64 = records.iter().map(|r| u64::from(r.complete)).sum();
    let calls: u64 = records.iter().map(|r| r.cost.llm_calls()).sum();
    let input: u64 = records.iter().map(|r| r.cost.input_tokens()).sum();
    let output: u64 = records.iter().map(|r| r.cost.output_tokens()).sum();
    let total: u64 = records.iter().map(|r| r.cost.total_tokens()).sum();
    Aggregates {
        partial_rate: round1(100.0 * partial as f64 / n),
        complete_rate: round1(100.0 * complete as f64 / n),
        mean_llm_calls: calls as f64 / n,
        mean_input_tokens: input as f64 / n,
        mean_output_tokens: output as f64 / n,
        mean_total_tokens: total as f64 / n,
    }
}

/// The grounded subgraph as prompt lines, one `subject | relation | object`
/// per triple.
fn knowledge_lines(subgraph: &BTreeSet<crate::kg::Triple>) -> Vec<String> {
    subgraph.iter().map(|t| t.to_string()).collect()
}

/// Answers one question end to end and scores it against the gold answers.
/// Returns the record plus the exploration trace when exploration ran.
pub fn answer_question(
    example: &QAExample,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
    config: &BenchConfig,
) -> (PredictionRecord, Option<ExplorationTrace>) {
    let qid = example.id.as_str();
    let gold: BTreeSet<String> = example.answers.iter().cloned().collect();

    let mut predicted: BTreeSet<String> = BTreeSet::new();
    let mut error: Option<String> = None;
    let mut trace: Option<ExplorationTrace> = None;

    let outcome_label = match guidance::construct(&example.question, gateway, qid) {
        Ok(gg) => {
            let (outcome, t) = explorer::explore(&gg, kg, gateway, &config.explorer, qid);
            let label = outcome.label();
            match outcome {
                ExplorationOutcome::Grounded { subgraph, .. } => {
                    let lines = knowledge_lines(&subgraph);
                    match gateway.final_answer(qid, &example.question, &lines) {
                        Ok(answers) => predicted = answers.into_iter().collect(),
                        Err(e) => error = Some(e.to_string()),
                    }
                }
                ExplorationOutcome::Fallback { .. } if config.fallback => {
                    match gateway.direct_answer(qid, &example.question) {
                        Ok(answers) => predicted = answers.into_iter().collect(),
                        Err(e) => error = Some(e.to_string()),
                    }
                }
                ExplorationOutcome::Fallback { .. } => {}
            }
            trace = Some(t);
            label
        }
        Err(err) => {
            let label = ExplorationOutcome::Fallback {
                reason: FallbackReason::ConstructionFailed,
            }
            .label();
            match err {
                // A broken provider cannot answer directly either; record it.
                ConstructError::Gateway(GatewayError::Provider(e)) => {
                    error = Some(e.to_string());
                }
                other => {
                    if config.fallback {
                        match gateway.direct_answer(qid, &example.question) {
                            Ok(answers) => predicted = answers.into_iter().collect(),
                            Err(e) => error = Some(e.to_string()),
                        }
                    } else {
                        error = Some(other.to_string());
                    }
                }
            }
            label
        }
    };

    let (partial, complete) = score(&predicted, &gold);
    let record = PredictionRecord {
        id: example.id.clone(),
        outcome: outcome_label,
        predicted: predicted.into_iter().collect(),
        partial,
        complete,
        cost: gateway.ledger_snapshot(qid),
        error,
    };
    (record, trace)
}

/// Runs every example and aggregates a report. Records keep dataset order
/// regardless of worker count; with a scripted provider the report is
/// byte-identical across runs and job counts. `on_done` fires once per
/// finished question, in completion order.
pub fn run_benchmark(
    dataset: &[QAExample],
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
    config: &BenchConfig,
    on_done: impl Fn(&PredictionRecord, Option<&ExplorationTrace>) + Sync,
) -> BenchReport {
    assert!(!dataset.is_empty(), "benchmark needs at least one example");
    let jobs = config.jobs.max(1).min(dataset.len());
    let slots: Vec<Mutex<Option<PredictionRecord>>> =
        dataset.iter().map(|_| Mutex::new(None)).collect();

    if jobs == 1 {
        for (i, example) in dataset.iter().enumerate() {
            let (record, trace) = answer_question(example, kg, gateway, config);
            on_done(&record, trace.as_ref());
            *slots[i].lock().expect("slot lock") = Some(record);
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= dataset.len() {
                        break;
                    }
                    let (record, trace) = answer_question(&dataset[i], kg, gateway, config);
                    on_done(&record, trace.as_ref());
                    *slots[i].lock().expect("slot lock") = Some(record);
                });
            }
        });
    }

    let records: Vec<PredictionRecord> = slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("record filled"))
        .collect();
    let aggregates = aggregate(&records);
    BenchReport {
        records,
        aggregates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn score_partial_without_complete() {
        let got = score(&strings(&["Inception"]), &strings(&["Inception", "Dunkirk"]));
        assert_eq!(got, (1, 0));
    }

    #[test]
    fn score_singleton_gold_makes_partial_equal_complete() {
        let got = score(&strings(&["2010"]), &strings(&["2010"]));
        assert_eq!(got, (1, 1));
    }

    #[test]
    fn score_empty_prediction() {
        let got = score(&BTreeSet::new(), &strings(&["London"]));
        assert_eq!(got, (0, 0));
    }

    #[test]
    fn score_normalizes_both_sides() {
        let got = score(&strings(&["christopher_nolan"]), &strings(&["Christopher Nolan"]));
        assert_eq!(got, (1, 1));
    }

    #[test]
    fn dataset_loader_validates_lines() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        let mut f = File::create(&path).unwrap();
        writeln!(f, "{{\"id\": \"a\", \"question\": \"?\", \"answers\": []}}").unwrap();
        drop(f);
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, BenchError::Format { line: 1, .. }));

        let mut f = File::create(&path).unwrap();
        writeln!(f, "{{\"id\": \"a\", \"question\": \"?\", \"answers\": [\"x\"]}}").unwrap();
        writeln!(f, "{{\"id\": \"a\", \"question\": \"?\", \"answers\": [\"y\"]}}").unwrap();
        drop(f);
        let err = load_dataset(&path).unwrap_err();
        match err {
            BenchError::Format { line, reason, .. } => {
                assert_eq!(line, 2);
                assert!(reason.contains("duplicate"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_dataset_file_names_the_path() {
        let err = load_dataset("/nonexistent/questions.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/questions.jsonl"));
    }
}
