//! In-memory knowledge graph store.
//!
//! Loads a directed labeled multigraph from a TSV file and serves the
//! lookups the exploration loop relies on: name resolution, neighborhoods,
//! edge predicates and relation sets between entity sets. The graph is
//! immutable once loaded and safe to share across threads.
//!
//! Connectivity predicates ([`KnowledgeGraph::has_edge`],
//! [`KnowledgeGraph::candidate_entities`], [`KnowledgeGraph::relations_between`])
//! are direction-agnostic; stored triples keep their input direction and are
//! returned with it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Errors raised while loading a knowledge graph file.
#[derive(Debug, Error)]
pub enum KgError {
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

/// Canonical lookup key for entity names and answer strings.
///
/// NFC-normalizes, treats `_` and space as identical, lowercases, trims and
/// collapses internal whitespace runs. Idempotent: applying it twice equals
/// applying it once.
pub fn normalize_name(name: &str) -> String {
    let composed: String = name.nfc().collect();
    let lowered = composed.replace('_', " ").to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.nfc().collect()
}

/// An entity, identified by its surface string as loaded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(raw: impl Into<String>) -> Self {
        let s = raw.into().trim().to_string();
        assert!(!s.is_empty(), "entity id must be non-empty after trimming");
        EntityId(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn normalized_key(&self) -> String {
        normalize_name(&self.0)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId::new(s)
    }
}

/// A relation label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct RelationId(String);

impl RelationId {
    pub fn new(raw: impl Into<String>) -> Self {
        let s = raw.into().trim().to_string();
        assert!(!s.is_empty(), "relation id must be non-empty after trimming");
        RelationId(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RelationId {
    fn from(s: &str) -> Self {
        RelationId::new(s)
    }
}

/// A directed labeled edge, exactly as loaded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(
        subject: impl Into<EntityId>,
        relation: impl Into<RelationId>,
        object: impl Into<EntityId>,
    ) -> Self {
        Triple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {}", self.subject, self.relation, self.object)
    }
}

/// Which side of a stored triple a neighbor sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The queried entity is the subject; the neighbor is the object.
    Out,
    /// The queried entity is the object; the neighbor is the subject.
    In,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Out => "out",
            Direction::In => "in",
        })
    }
}

/// Immutable directed labeled multigraph with adjacency and name indexes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: BTreeSet<EntityId>,
    relations: BTreeSet<RelationId>,
    triples: BTreeSet<Triple>,
    index_out: BTreeMap<EntityId, BTreeSet<(RelationId, EntityId)>>,
    index_in: BTreeMap<EntityId, BTreeSet<(RelationId, EntityId)>>,
    name_index: BTreeMap<String, BTreeSet<EntityId>>,
}

impl KnowledgeGraph {
    /// Builds a graph from triples; duplicates are stored once.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut kg = KnowledgeGraph::default();
        for t in triples {
            kg.insert(t);
        }
        kg
    }

    fn insert(&mut self, t: Triple) {
        if !self.triples.insert(t.clone()) {
            return;
        }
        for e in [&t.subject, &t.object] {
            if self.entities.insert(e.clone()) {
                self.name_index
                    .entry(e.normalized_key())
                    .or_default()
                    .insert(e.clone());
            }
        }
        self.relations.insert(t.relation.clone());
        self.index_out
            .entry(t.subject.clone())
            .or_default()
            .insert((t.relation.clone(), t.object.clone()));
        self.index_in
            .entry(t.object)
            .or_default()
            .insert((t.relation, t.subject));
    }

    /// Loads a graph from a UTF-8 TSV file: `subject<TAB>relation<TAB>object`,
    /// one triple per line. Lines starting with `#` and blank lines are ignored.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self, KgError> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let file = File::open(path).map_err(|source| KgError::Io {
            path: label.clone(),
            source,
        })?;
        Self::parse_tsv(BufReader::new(file), &label)
    }

    fn parse_tsv<R: BufRead>(reader: R, path_label: &str) -> Result<Self, KgError> {
        let mut triples = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| KgError::Io {
                path: path_label.to_string(),
                source,
            })?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::Format {
                    path: path_label.to_string(),
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let trimmed: Vec<&str> = fields.iter().map(|f| f.trim()).collect();
            if let Some(pos) = trimmed.iter().position(|f| f.is_empty()) {
                return Err(KgError::Format {
                    path: path_label.to_string(),
                    line: line_no,
                    reason: format!("empty field in column {}", pos + 1),
                });
            }
            triples.push(Triple::new(trimmed[0], trimmed[1], trimmed[2]));
        }
        Ok(Self::from_triples(triples))
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.iter()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationId> {
        self.relations.iter()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn contains_entity(&self, e: &EntityId) -> bool {
        self.entities.contains(e)
    }

    /// All entities whose normalized key equals `normalize_name(name)`.
    pub fn entities_by_name(&self, name: &str) -> BTreeSet<EntityId> {
        self.name_index
            .get(&normalize_name(name))
            .cloned()
            .unwrap_or_default()
    }

    /// Every edge touching `e`, with the stored direction. Empty for unknown
    /// entities.
    pub fn neighbors(&self, e: &EntityId) -> BTreeSet<(RelationId, EntityId, Direction)> {
        let mut out = BTreeSet::new();
        if let Some(set) = self.index_out.get(e) {
            for (r, o) in set {
                out.insert((r.clone(), o.clone(), Direction::Out));
            }
        }
        if let Some(set) = self.index_in.get(e) {
            for (r, s) in set {
                out.insert((r.clone(), s.clone(), Direction::In));
            }
        }
        out
    }

    /// True iff some triple connects `a` and `b` in either direction. When
    /// `required` is given, the connecting triple's relation must equal it.
    pub fn has_edge(&self, a: &EntityId, b: &EntityId, required: Option<&RelationId>) -> bool {
        let hit = |from: &EntityId, to: &EntityId| {
            self.index_out.get(from).is_some_and(|set| {
                set.iter()
                    .any(|(r, o)| o == to && required.is_none_or(|req| r == req))
            })
        };
        hit(a, b) || hit(b, a)
    }

    /// Every relation on at least one triple with one endpoint in `a` and the
    /// other in `b`, either direction.
    pub fn relations_between(
        &self,
        a: &BTreeSet<EntityId>,
        b: &BTreeSet<EntityId>,
    ) -> BTreeSet<RelationId> {
        self.relations_between_counts(a, b).into_keys().collect()
    }

    /// Like [`Self::relations_between`], but counts the distinct connecting
    /// triples per relation.
    pub fn relations_between_counts(
        &self,
        a: &BTreeSet<EntityId>,
        b: &BTreeSet<EntityId>,
    ) -> BTreeMap<RelationId, usize> {
        let mut connecting: BTreeSet<Triple> = BTreeSet::new();
        for x in a {
            if let Some(set) = self.index_out.get(x) {
                for (r, o) in set {
                    if b.contains(o) {
                        connecting.insert(Triple {
                            subject: x.clone(),
                            relation: r.clone(),
                            object: o.clone(),
                        });
                    }
                }
            }
            if let Some(set) = self.index_in.get(x) {
                for (r, s) in set {
                    if b.contains(s) {
                        connecting.insert(Triple {
                            subject: s.clone(),
                            relation: r.clone(),
                            object: x.clone(),
                        });
                    }
                }
            }
        }
        let mut counts = BTreeMap::new();
        for t in connecting {
            *counts.entry(t.relation).or_insert(0) += 1;
        }
        counts
    }

    /// Union of the neighbor endpoints of `curr`, excluding `curr` itself.
    pub fn candidate_entities(&self, curr: &BTreeSet<EntityId>) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for e in curr {
            for (_, n, _) in self.neighbors(e) {
                out.insert(n);
            }
        }
        for e in curr {
            out.remove(e);
        }
        out
    }
}
