//! Command-line surface: inspect knowledge graphs, build guidance graphs,
//! answer single questions, and run benchmarks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 provider
//! error. JSON results go to standard output; progress and traces go to
//! standard error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use gg_explore::bench::{
    answer_question, load_dataset, run_benchmark, BenchConfig, BenchError, QAExample,
};
use gg_explore::explorer::ExplorerConfig;
use gg_explore::gateway::{GatewayError, HttpConfig, LlmGateway, ProviderError, ScriptError};
use gg_explore::guidance::{self, ConstructError};
use gg_explore::kg::{KgError, KnowledgeGraph};

#[derive(Parser)]
#[command(
    name = "gg-explore",
    version,
    about = "Question answering over knowledge graphs via guidance-graph grounding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-graph inspection.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Guidance-graph construction.
    Gg {
        #[command(subcommand)]
        command: GgCommand,
    },
    /// Answer one question and print its prediction record as JSON.
    Ask(AskArgs),
    /// Run a dataset and write a benchmark report.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum KgCommand {
    /// Print entity, relation and triple counts.
    Stats {
        /// Knowledge-graph TSV file.
        #[arg(long)]
        kg: PathBuf,
        /// Write JSON here instead of the plain line; `-` for stdout.
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(Subcommand)]
enum GgCommand {
    /// Construct and validate the guidance graph for one question.
    Build {
        #[command(flatten)]
        provider: ProviderArgs,
        /// The question to process.
        #[arg(long)]
        question: String,
        /// Question id keying the transcript and the cost ledger.
        #[arg(long, default_value = "q0")]
        id: String,
        /// Output target; `-` (default) for stdout.
        #[arg(long, default_value = "-")]
        out: String,
    },
}

#[derive(Args)]
struct AskArgs {
    /// Knowledge-graph TSV file.
    #[arg(long)]
    kg: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// The question to answer.
    #[arg(long)]
    question: String,
    /// Question id keying the transcript and the cost ledger.
    #[arg(long, default_value = "q0")]
    id: String,
    /// Gold answers for scoring, comma-separated. Unscored when absent.
    #[arg(long)]
    gold: Option<String>,
    #[command(flatten)]
    run: RunArgs,
    /// Output target; `-` (default) for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Knowledge-graph TSV file.
    #[arg(long)]
    kg: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Dataset file, JSON Lines with id/question/answers.
    #[arg(long)]
    dataset: PathBuf,
    /// Worker threads for question processing.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    run: RunArgs,
    /// Output target; `-` (default) for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ProviderArgs {
    /// LLM provider backend.
    #[arg(long, value_enum)]
    provider: ProviderKind,
    /// Transcript file for the scripted provider.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    /// Deterministic replay from a transcript file.
    Scripted,
    /// Chat-completions endpoint configured by GG_LLM_* variables.
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Seed for randomized target selection; deterministic lowest-id order
    /// when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the pruning-attempt budget (default: twice the clue count).
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Emit exploration trace events to stderr, one JSON object per line.
    #[arg(long)]
    trace: bool,
    /// Answer directly with the LLM when grounding falls back.
    #[arg(long, value_enum, default_value = "on")]
    fallback: Toggle,
    /// Ablation: skip candidate filtering and holistic propagation.
    #[arg(long)]
    disable_structural_alignment: bool,
    /// Ablation: never re-root exploration on pruning failures.
    #[arg(long)]
    disable_branch_selection: bool,
    /// Ablation: offer only the clue relation instead of the full phrase.
    #[arg(long)]
    context_free_pruning: bool,
}

impl RunArgs {
    fn bench_config(&self, jobs: usize) -> BenchConfig {
        BenchConfig {
            explorer: ExplorerConfig {
                max_rounds: self.max_rounds,
                seed: self.seed,
                structural_alignment: !self.disable_structural_alignment,
                branch_selection: !self.disable_branch_selection,
                context_rich_phrases: !self.context_free_pruning,
                ..ExplorerConfig::default()
            },
            fallback: self.fallback == Toggle::On,
            jobs,
        }
    }
}

enum CliError {
    Usage(String),
    Data(String),
    Provider(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Provider(m) => m,
        }
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ScriptError> for CliError {
    fn from(e: ScriptError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConstructError> for CliError {
    fn from(e: ConstructError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Provider(e.to_string())
    }
}

fn make_gateway(args: &ProviderArgs) -> Result<LlmGateway, CliError> {
    match args.provider {
        ProviderKind::Scripted => {
            let path = args.transcript.as_ref().ok_or_else(|| {
                CliError::Usage("--provider scripted requires --transcript".to_string())
            })?;
            Ok(LlmGateway::scripted_from_path(path)?)
        }
        ProviderKind::Http => {
            if args.transcript.is_some() {
                return Err(CliError::Usage(
                    "--transcript only applies to --provider scripted".to_string(),
                ));
            }
            let config = HttpConfig::from_env().map_err(|e| match e {
                ProviderError::Config(msg) => CliError::Usage(msg),
                other => CliError::Provider(other.to_string()),
            })?;
            Ok(LlmGateway::http(config))
        }
    }
}

/// Writes a JSON document to a file or, for `-`, to stdout.
fn emit(out: &str, json: &str) -> Result<(), CliError> {
    if out == "-" {
        let stdout = std::io::stdout();
        let mut handle = stdout.lock();
        handle
            .write_all(json.as_bytes())
            .map_err(|e| CliError::Data(format!("cannot write to stdout: {e}")))?;
    } else {
        std::fs::write(out, json)
            .map_err(|e| CliError::Data(format!("cannot write {out}: {e}")))?;
    }
    Ok(())
}

fn pretty(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    text
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Kg {
            command: KgCommand::Stats { kg, out },
        } => {
            let graph = KnowledgeGraph::load_tsv(&kg)?;
            match out {
                None => println!(
                    "entities={} relations={} triples={}",
                    graph.entity_count(),
                    graph.relation_count(),
                    graph.triple_count()
                ),
                Some(target) => {
                    let value = serde_json::json!({
                        "entities": graph.entity_count(),
                        "relations": graph.relation_count(),
                        "triples": graph.triple_count(),
                    });
                    emit(&target, &pretty(&value))?;
                }
            }
            Ok(())
        }
        Command::Gg {
            command:
                GgCommand::Build {
                    provider,
                    question,
                    id,
                    out,
                },
        } => {
            let gateway = make_gateway(&provider)?;
            let gg = guidance::construct(&question, &gateway, &id)?;
            let findings = guidance::validate(&gg);
            let mut value = gg.to_json_value();
            value["findings"] = serde_json::to_value(&findings).expect("findings serialize");
            value["cost"] =
                serde_json::to_value(gateway.ledger_snapshot(&id)).expect("ledger serializes");
            emit(&out, &pretty(&value))
        }
        Command::Ask(args) => {
            let kg = KnowledgeGraph::load_tsv(&args.kg)?;
            let gateway = make_gateway(&args.provider)?;
            let config = args.run.bench_config(1);
            let example = QAExample {
                id: args.id.clone(),
                question: args.question.clone(),
                answers: args
                    .gold
                    .as_deref()
                    .map(|g| {
                        g.split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    })
                    .unwrap_or_default(),
            };
            let (record, trace) = answer_question(&example, &kg, &gateway, &config);
            if args.run.trace {
                if let Some(trace) = &trace {
                    eprint!("{}", trace.to_jsonl());
                }
            }
            let value = serde_json::to_value(&record).expect("record serializes");
            emit(&args.out, &pretty(&value))
        }
        Command::Bench(args) => {
            let kg = KnowledgeGraph::load_tsv(&args.kg)?;
            let gateway = make_gateway(&args.provider)?;
            let dataset = load_dataset(&args.dataset)?;
            if dataset.is_empty() {
                return Err(CliError::Data(format!(
                    "{}: dataset is empty",
                    args.dataset.display()
                )));
            }
            let config = args.run.bench_config(args.jobs);
            let emit_trace = args.run.trace;
            let report = run_benchmark(&dataset, &kg, &gateway, &config, |record, trace| {
                let stderr = std::io::stderr();
                let mut handle = stderr.lock();
                if emit_trace {
                    if let Some(trace) = trace {
                        let _ = handle.write_all(trace.to_jsonl().as_bytes());
                    }
                }
                let _ = writeln!(
                    handle,
                    "{}: {} partial={} complete={} calls={}",
                    record.id,
                    record.outcome,
                    record.partial,
                    record.complete,
                    record.cost.llm_calls()
                );
            });
            emit(&args.out, &report.to_json_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{err}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
