//! Exploration trace: an ordered record of what the loop did.

use std::collections::BTreeMap;

use serde::Serialize;

/// One observable step of an exploration, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    StartingPoints {
        resolved: BTreeMap<String, Vec<String>>,
    },
    TargetSelected {
        round: usize,
        target: String,
        contexts: usize,
    },
    StructuralFilter {
        round: usize,
        target: String,
        candidates_before: usize,
        candidates_after: usize,
    },
    RelationsOffered {
        round: usize,
        target: String,
        phrase: String,
        relations: Vec<String>,
    },
    RelationChosen {
        round: usize,
        target: String,
        relation: String,
        mapped_entities: usize,
    },
    PruningFailed {
        round: usize,
        target: String,
        context_clue: String,
        reason: String,
    },
    BranchDecision {
        round: usize,
        target: String,
        kept_clue: String,
        pruned_clue: String,
    },
    TargetExhausted {
        round: usize,
        target: String,
    },
    HolisticRemoval {
        clue: String,
        removed: Vec<String>,
        emptied: bool,
    },
    ResidualGrounded {
        edge: String,
        relation: String,
        llm: bool,
    },
    ResidualUngrounded {
        edge: String,
        reason: String,
    },
    ProviderAborted {
        detail: String,
    },
    Completed {
        outcome: String,
        rounds: usize,
    },
}

/// Ordered list of trace events with line-oriented JSON serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplorationTrace {
    events: Vec<TraceEvent>,
}

impl ExplorationTrace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Detail of the provider failure that aborted the run, if any.
    pub fn provider_abort(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::ProviderAborted { detail } => Some(detail.as_str()),
            _ => None,
        })
    }

    /// One JSON object per line, in event order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }
}
