//! Guidance-graph construction.
//!
//! A guidance graph is a small labeled graph abstracting the question: clue
//! nodes stand for the entities the answer must touch, clue edges for the
//! relations between them. Three LLM steps produce the raw material (a
//! declarative statement, keywords with co-reference groups, associations
//! between groups); [`apply_rules`] then builds the graph deterministically:
//!
//! 1. Specific keywords (named entities) only ever become nodes.
//! 2. A generic keyword sharing a group with a specific one donates its label
//!    to an unlabeled incident association instead of becoming a node.
//! 3. In an all-generic group the first-listed keyword labels the node; the
//!    rest are donors.
//! 4. Each association becomes one edge between its groups' nodes.
//!
//! Donor generics with no unlabeled incident association are dropped; an
//! unlabeled edge with no donor gets the default label `"related to"`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, LlmGateway, ProviderError};

/// Whether a keyword names a concrete entity or a broader term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClueKind {
    Specific,
    Generic,
}

/// A keyword extracted from the question. Keywords sharing a `group` refer to
/// the same entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub label: String,
    pub kind: ClueKind,
    pub group: String,
}

/// A mined relationship between two co-reference groups. An empty `label`
/// means the relationship was detected but not named.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    pub head_group: String,
    pub label: String,
    pub tail_group: String,
}

/// Identifier of a clue node; the co-reference group id it was built from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ClueId(String);

impl ClueId {
    pub fn new(raw: impl Into<String>) -> Self {
        ClueId(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClueId {
    fn from(s: &str) -> Self {
        ClueId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClueNode {
    pub id: ClueId,
    pub label: String,
    pub kind: ClueKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ClueEdge {
    pub head: ClueId,
    pub label: String,
    pub tail: ClueId,
}

impl fmt::Display for ClueEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -[{}]-> {}", self.head, self.label, self.tail)
    }
}

/// Rule-engine failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("group {group}: specific keywords disagree ({labels:?})")]
    AmbiguousCoreference { group: String, labels: Vec<String> },
    #[error("association references unknown group {group}")]
    UnknownGroup { group: String },
    #[error("association from group {group} to itself")]
    SelfAssociation { group: String },
}

/// Construction failures: either an LLM task failed or the rule engine
/// rejected the extracted material.
#[derive(Debug, Error)]
pub enum ConstructError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

impl ConstructError {
    /// The underlying provider failure, if that is what went wrong.
    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            ConstructError::Gateway(GatewayError::Provider(e)) => Some(e),
            _ => None,
        }
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    NoNodes,
    MissingEndpoint,
    SpecificLabelOnEdge,
    NoSpecificNode,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    pub message: String,
}

/// The guidance graph: clue nodes, clue edges and the declarative rewrite of
/// the question they were built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidanceGraph {
    nodes: BTreeMap<ClueId, ClueNode>,
    edges: BTreeSet<ClueEdge>,
    statement: String,
}

impl GuidanceGraph {
    /// Assembles a graph directly from parts. Panics when an edge references
    /// an undeclared node; callers building graphs by hand own that invariant.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = ClueNode>,
        edges: impl IntoIterator<Item = ClueEdge>,
        statement: impl Into<String>,
    ) -> Self {
        let nodes: BTreeMap<ClueId, ClueNode> =
            nodes.into_iter().map(|n| (n.id.clone(), n)).collect();
        let edges: BTreeSet<ClueEdge> = edges.into_iter().collect();
        for e in &edges {
            assert!(
                nodes.contains_key(&e.head) && nodes.contains_key(&e.tail),
                "edge {e} references an undeclared node"
            );
        }
        GuidanceGraph {
            nodes,
            edges,
            statement: statement.into(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ClueNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: &ClueId) -> Option<&ClueNode> {
        self.nodes.get(id)
    }

    /// Label of a node; falls back to the raw id for unknown nodes.
    pub fn label<'a>(&'a self, id: &'a ClueId) -> &'a str {
        self.nodes.get(id).map_or(id.as_str(), |n| n.label.as_str())
    }

    pub fn edges(&self) -> impl Iterator<Item = &ClueEdge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn statement(&self) -> &str {
        &self.statement
    }

    pub fn set_statement(&mut self, statement: impl Into<String>) {
        self.statement = statement.into();
    }

    /// Edges touching `id`, paired with the opposite endpoint.
    pub fn incident_edges(&self, id: &ClueId) -> Vec<(&ClueEdge, &ClueId)> {
        self.edges
            .iter()
            .filter_map(|e| {
                if &e.head == id {
                    Some((e, &e.tail))
                } else if &e.tail == id {
                    Some((e, &e.head))
                } else {
                    None
                }
            })
            .collect()
    }

    /// The phrase form of an edge: head label, edge label, tail label.
    pub fn edge_phrase(&self, edge: &ClueEdge) -> String {
        format!(
            "{} {} {}",
            self.label(&edge.head),
            edge.label,
            self.label(&edge.tail)
        )
    }

    /// Connected components over the undirected edge set, as sets of node ids.
    pub fn components(&self) -> Vec<BTreeSet<ClueId>> {
        let mut remaining: BTreeSet<ClueId> = self.nodes.keys().cloned().collect();
        let mut components = Vec::new();
        while let Some(seed) = remaining.iter().next().cloned() {
            let mut component = BTreeSet::new();
            let mut frontier = vec![seed];
            while let Some(id) = frontier.pop() {
                if !remaining.remove(&id) {
                    continue;
                }
                for (_, other) in self.incident_edges(&id) {
                    frontier.push(other.clone());
                }
                component.insert(id);
            }
            components.push(component);
        }
        components
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "statement": self.statement,
            "nodes": self.nodes.values().collect::<Vec<_>>(),
            "edges": self.edges.iter().collect::<Vec<_>>(),
        })
    }
}

/// Builds the guidance graph from keywords and associations by applying the
/// four generation rules. Deterministic: identical inputs yield identical
/// graphs, labels included. Performs no LLM calls.
pub fn apply_rules(
    keywords: &[Keyword],
    associations: &[Association],
) -> Result<GuidanceGraph, RuleError> {
    // Groups in first-appearance order; keyword order preserved within each.
    let mut group_order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<&Keyword>> = BTreeMap::new();
    for kw in keywords {
        if !grouped.contains_key(&kw.group) {
            group_order.push(kw.group.clone());
        }
        grouped.entry(kw.group.clone()).or_default().push(kw);
    }

    let mut nodes: BTreeMap<ClueId, ClueNode> = BTreeMap::new();
    // Unconsumed donor generics per group, in keyword order.
    let mut donors: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for group in &group_order {
        let members = &grouped[group];
        let mut specific_labels: Vec<&str> = members
            .iter()
            .filter(|k| k.kind == ClueKind::Specific)
            .map(|k| k.label.as_str())
            .collect();
        specific_labels.dedup();
        let distinct_specifics: BTreeSet<&str> = specific_labels.iter().copied().collect();
        if distinct_specifics.len() > 1 {
            return Err(RuleError::AmbiguousCoreference {
                group: group.clone(),
                labels: distinct_specifics.iter().map(|s| s.to_string()).collect(),
            });
        }

        let mut generic_labels: Vec<String> = Vec::new();
        for k in members.iter().filter(|k| k.kind == ClueKind::Generic) {
            if !generic_labels.contains(&k.label) {
                generic_labels.push(k.label.clone());
            }
        }

        let (label, kind, leftover) = match distinct_specifics.iter().next() {
            // Rule 2: the specific labels the node, every generic is a donor.
            Some(specific) => (specific.to_string(), ClueKind::Specific, generic_labels),
            // Rule 3: first-listed generic labels the node, the rest donate.
            None => {
                let mut rest = generic_labels;
                let label = rest.remove(0);
                (label, ClueKind::Generic, rest)
            }
        };
        let id = ClueId::new(group.clone());
        nodes.insert(
            id.clone(),
            ClueNode {
                id,
                label,
                kind,
            },
        );
        donors.insert(group.clone(), leftover);
    }

    let specific_labels: BTreeSet<String> = nodes
        .values()
        .filter(|n| n.kind == ClueKind::Specific)
        .map(|n| n.label.clone())
        .collect();

    let mut edges: BTreeSet<ClueEdge> = BTreeSet::new();
    for assoc in associations {
        for group in [&assoc.head_group, &assoc.tail_group] {
            if !nodes.contains_key(&ClueId::new(group.clone())) {
                return Err(RuleError::UnknownGroup {
                    group: group.clone(),
                });
            }
        }
        if assoc.head_group == assoc.tail_group {
            return Err(RuleError::SelfAssociation {
                group: assoc.head_group.clone(),
            });
        }

        // Rule 1: a specific keyword never serves as an edge label, so any
        // colliding candidate is passed over.
        let mut label = None;
        let assoc_label = assoc.label.trim();
        if !assoc_label.is_empty() && !specific_labels.contains(assoc_label) {
            label = Some(assoc_label.to_string());
        }
        if label.is_none() {
            'donate: for group in [&assoc.head_group, &assoc.tail_group] {
                let pool = donors.get_mut(group).expect("group exists");
                for i in 0..pool.len() {
                    if !specific_labels.contains(&pool[i]) {
                        label = Some(pool.remove(i));
                        break 'donate;
                    }
                }
            }
        }
        let label = label.unwrap_or_else(|| {
            let mut fallback = String::from("related to");
            let mut n = 2;
            while specific_labels.contains(&fallback) {
                fallback = format!("related to {n}");
                n += 1;
            }
            fallback
        });

        edges.insert(ClueEdge {
            head: ClueId::new(assoc.head_group.clone()),
            label,
            tail: ClueId::new(assoc.tail_group.clone()),
        });
    }

    Ok(GuidanceGraph {
        nodes,
        edges,
        statement: String::new(),
    })
}

/// Checks a guidance graph and reports findings; never fails.
pub fn validate(gg: &GuidanceGraph) -> Vec<Finding> {
    let mut findings = Vec::new();
    if gg.node_count() == 0 {
        findings.push(Finding {
            severity: Severity::Error,
            kind: FindingKind::NoNodes,
            message: "guidance graph has no nodes".to_string(),
        });
        return findings;
    }

    let specific_labels: BTreeSet<&str> = gg
        .nodes()
        .filter(|n| n.kind == ClueKind::Specific)
        .map(|n| n.label.as_str())
        .collect();

    for edge in gg.edges() {
        for endpoint in [&edge.head, &edge.tail] {
            if gg.node(endpoint).is_none() {
                findings.push(Finding {
                    severity: Severity::Error,
                    kind: FindingKind::MissingEndpoint,
                    message: format!("edge {edge} references undeclared node {endpoint}"),
                });
            }
        }
        if specific_labels.contains(edge.label.as_str()) {
            findings.push(Finding {
                severity: Severity::Error,
                kind: FindingKind::SpecificLabelOnEdge,
                message: format!("edge label {:?} is also a specific node label", edge.label),
            });
        }
    }

    if specific_labels.is_empty() {
        findings.push(Finding {
            severity: Severity::Warning,
            kind: FindingKind::NoSpecificNode,
            message: "no specific keyword: every node is conceptual, exploration has no starting point"
                .to_string(),
        });
    }

    if gg.components().len() > 1 {
        findings.push(Finding {
            severity: Severity::Warning,
            kind: FindingKind::Disconnected,
            message: "guidance graph is disconnected; only components with a resolvable starting point are explored"
                .to_string(),
        });
    }

    findings
}

/// Builds the guidance graph for a question: rewrite, keyword extraction and
/// relation mining through the gateway, then the rule engine.
pub fn construct(
    question: &str,
    gateway: &LlmGateway,
    question_id: &str,
) -> Result<GuidanceGraph, ConstructError> {
    let statement = gateway.rewrite(question_id, question)?;
    let keywords = gateway.extract_keywords(question_id, &statement)?;
    let associations = gateway.mine_relations(question_id, &statement, &keywords)?;
    let mut gg = apply_rules(&keywords, &associations)?;
    gg.set_statement(statement);
    Ok(gg)
}
