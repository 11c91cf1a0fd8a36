//! Knowledge-graph question answering driven by guidance-graph grounding.
//!
//! The pipeline turns a natural-language question into a small *guidance
//! graph* (clue nodes and clue edges abstracting the target knowledge), then
//! iteratively grounds that graph into an external knowledge graph:
//! structural alignment filters candidate entities without any LLM traffic,
//! context-aware pruning lets the LLM pick the relation that preserves the
//! clue edge's meaning, and dynamic branch selection re-roots exploration
//! when the graph is missing an edge. The grounded subgraph (or a direct
//! fallback) feeds the final answer, with every LLM call and token counted
//! per question.
//!
//! Modules:
//! - [`kg`]: immutable in-memory triple store with name and adjacency indexes
//! - [`guidance`]: guidance-graph types, rule engine and LLM construction
//! - [`gateway`]: provider-agnostic LLM access, structured tasks, cost ledger
//! - [`explorer`]: the iterative grounding loop
//! - [`bench`]: scoring, datasets and benchmark reports

pub mod bench;
pub mod explorer;
pub mod gateway;
pub mod guidance;
pub mod kg;

pub use bench::{answer_question, load_dataset, run_benchmark, BenchConfig, BenchReport};
pub use explorer::{explore, ExplorationOutcome, ExplorationTrace, ExplorerConfig};
pub use gateway::{CostLedger, LlmGateway};
pub use guidance::{construct, GuidanceGraph};
pub use kg::KnowledgeGraph;
