//! Iterative knowledge exploration.
//!
//! Grounds the guidance graph into the knowledge graph round by round. Each
//! round picks an unmapped clue adjacent to the mapped frontier, collects its
//! candidate entities, discards the ones that are not connected to every
//! mapped neighbor (structural alignment — no LLM involved), then lets the
//! LLM pick the relation that best substitutes into the clue edge's phrase
//! (context-aware pruning). After each new mapping a holistic alignment
//! propagates deletions across the whole mapping until it is mutually
//! supported again.
//!
//! When pruning fails and another mapped neighbor exists, the LLM chooses
//! between the two exploration phrases; the losing branch's clue is
//! permanently pruned. Exploration succeeds when every non-pruned clue of the
//! components holding a starting point is mapped.

mod trace;

pub use trace::{ExplorationTrace, TraceEvent};

use std::collections::{BTreeMap, BTreeSet};

use crate::gateway::{GatewayError, LlmGateway};
use crate::guidance::{ClueEdge, ClueId, ClueKind, GuidanceGraph};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

/// Ablation and loop-guard switches.
#[derive(Debug, Clone)]
pub struct ExplorerConfig {
    /// Pruning attempts allowed per question; defaults to twice the clue
    /// node count.
    pub max_rounds: Option<usize>,
    /// When set, targets are picked pseudo-randomly instead of by lowest
    /// clue id. Mapping order is permutation-invariant, so either works.
    pub seed: Option<u64>,
    /// Structural alignment: candidate filtering plus holistic propagation.
    pub structural_alignment: bool,
    /// Dynamic branch selection on pruning failure.
    pub branch_selection: bool,
    /// Full context phrases for relation selection; when off, only the clue
    /// relation label is offered.
    pub context_rich_phrases: bool,
    /// Largest candidate relation list put in front of the LLM.
    pub relation_cap: usize,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            max_rounds: None,
            seed: None,
            structural_alignment: true,
            branch_selection: true,
            context_rich_phrases: true,
            relation_cap: 30,
        }
    }
}

/// Evolving assignment of clue nodes to entity sets, plus the grounded
/// relation per clue edge and the permanently pruned clues.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClueMapping {
    node_map: BTreeMap<ClueId, BTreeSet<EntityId>>,
    edge_ground: BTreeMap<ClueEdge, RelationId>,
    pruned_clues: BTreeSet<ClueId>,
}

impl ClueMapping {
    pub fn node_map(&self) -> &BTreeMap<ClueId, BTreeSet<EntityId>> {
        &self.node_map
    }

    pub fn mapped(&self, clue: &ClueId) -> Option<&BTreeSet<EntityId>> {
        self.node_map.get(clue)
    }

    pub fn is_mapped(&self, clue: &ClueId) -> bool {
        self.node_map.contains_key(clue)
    }

    /// Maps a clue to a non-empty entity set.
    pub fn insert(&mut self, clue: ClueId, entities: BTreeSet<EntityId>) {
        assert!(!entities.is_empty(), "mapped sets must be non-empty");
        self.node_map.insert(clue, entities);
    }

    /// Grounds an edge; both endpoints must be mapped.
    pub fn ground(&mut self, edge: ClueEdge, relation: RelationId) {
        assert!(
            self.is_mapped(&edge.head) && self.is_mapped(&edge.tail),
            "grounded edges need both endpoints mapped"
        );
        self.edge_ground.insert(edge, relation);
    }

    pub fn grounded(&self, edge: &ClueEdge) -> Option<&RelationId> {
        self.edge_ground.get(edge)
    }

    pub fn edge_ground(&self) -> &BTreeMap<ClueEdge, RelationId> {
        &self.edge_ground
    }

    /// Permanently prunes a clue: unmaps it and drops grounds touching it.
    pub fn prune(&mut self, clue: &ClueId) {
        self.node_map.remove(clue);
        self.edge_ground
            .retain(|edge, _| edge.head != *clue && edge.tail != *clue);
        self.pruned_clues.insert(clue.clone());
    }

    pub fn pruned(&self) -> &BTreeSet<ClueId> {
        &self.pruned_clues
    }

    /// Rebuilds the mapping from aligned sets: empty sets are dropped and
    /// grounds are kept only while both endpoints stay mapped.
    fn with_aligned_sets(&self, sets: BTreeMap<ClueId, BTreeSet<EntityId>>) -> ClueMapping {
        let node_map: BTreeMap<ClueId, BTreeSet<EntityId>> =
            sets.into_iter().filter(|(_, s)| !s.is_empty()).collect();
        let edge_ground = self
            .edge_ground
            .iter()
            .filter(|(e, _)| node_map.contains_key(&e.head) && node_map.contains_key(&e.tail))
            .map(|(e, r)| (e.clone(), r.clone()))
            .collect();
        ClueMapping {
            node_map,
            edge_ground,
            pruned_clues: self.pruned_clues.clone(),
        }
    }
}

/// An edge joining the target clue to a mapped clue.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeContext {
    pub edge: ClueEdge,
    pub mapped_clue: ClueId,
    pub target_is_head: bool,
}

/// A selected exploration target with every context that ties it to the
/// mapped frontier, primary context first.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetContext {
    pub target: ClueId,
    pub contexts: Vec<EdgeContext>,
}

/// Why exploration fell back to direct answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackReason {
    NoStartingPoint,
    ConstructionFailed,
    PruningExhausted,
    RoundLimit,
}

impl FallbackReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FallbackReason::NoStartingPoint => "no_starting_point",
            FallbackReason::ConstructionFailed => "construction_failed",
            FallbackReason::PruningExhausted => "pruning_exhausted",
            FallbackReason::RoundLimit => "round_limit",
        }
    }
}

/// Result of one exploration: either a grounded subgraph or a fallback.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplorationOutcome {
    Grounded {
        subgraph: BTreeSet<Triple>,
        mapping: ClueMapping,
    },
    Fallback {
        reason: FallbackReason,
    },
}

impl ExplorationOutcome {
    pub fn is_grounded(&self) -> bool {
        matches!(self, ExplorationOutcome::Grounded { .. })
    }

    pub fn label(&self) -> String {
        match self {
            ExplorationOutcome::Grounded { .. } => "grounded".to_string(),
            ExplorationOutcome::Fallback { reason } => format!("fallback:{}", reason.as_str()),
        }
    }
}

/// Resolves each specific clue node against the knowledge graph's name
/// index. Generic nodes never become starting points; unresolved specifics
/// are simply absent. One hit is enough for exploration to proceed.
pub fn find_starting_points(gg: &GuidanceGraph, kg: &KnowledgeGraph) -> ClueMapping {
    let mut mapping = ClueMapping::default();
    for node in gg.nodes() {
        if node.kind != ClueKind::Specific {
            continue;
        }
        let hits = kg.entities_by_name(&node.label);
        if !hits.is_empty() {
            mapping.insert(node.id.clone(), hits);
        }
    }
    mapping
}

fn eligible_targets(
    gg: &GuidanceGraph,
    mapping: &ClueMapping,
    excluded: &BTreeSet<ClueId>,
) -> Vec<ClueId> {
    gg.nodes()
        .filter(|n| {
            !mapping.is_mapped(&n.id)
                && !mapping.pruned().contains(&n.id)
                && !excluded.contains(&n.id)
                && gg
                    .incident_edges(&n.id)
                    .iter()
                    .any(|(_, other)| mapping.is_mapped(other))
        })
        .map(|n| n.id.clone())
        .collect()
}

/// Every guidance edge joining `target` to a currently mapped clue, ordered
/// primary-first: smallest mapped set, then clue id, then edge.
fn contexts_of(gg: &GuidanceGraph, mapping: &ClueMapping, target: &ClueId) -> Vec<EdgeContext> {
    let mut contexts: Vec<EdgeContext> = gg
        .incident_edges(target)
        .into_iter()
        .filter(|(_, other)| mapping.is_mapped(other))
        .map(|(edge, other)| EdgeContext {
            edge: edge.clone(),
            mapped_clue: other.clone(),
            target_is_head: edge.head == *target,
        })
        .collect();
    contexts.sort_by(|a, b| {
        let size_a = mapping.mapped(&a.mapped_clue).map_or(0, BTreeSet::len);
        let size_b = mapping.mapped(&b.mapped_clue).map_or(0, BTreeSet::len);
        size_a
            .cmp(&size_b)
            .then_with(|| a.mapped_clue.cmp(&b.mapped_clue))
            .then_with(|| a.edge.cmp(&b.edge))
    });
    contexts
}

/// Picks the next exploration target: an unmapped, non-pruned clue adjacent
/// to at least one mapped clue, lowest clue id first, with all of its mapped
/// contexts attached. `None` when no clue qualifies.
pub fn select_target(gg: &GuidanceGraph, mapping: &ClueMapping) -> Option<TargetContext> {
    let target = eligible_targets(gg, mapping, &BTreeSet::new())
        .into_iter()
        .next()?;
    let contexts = contexts_of(gg, mapping, &target);
    Some(TargetContext { target, contexts })
}

/// Keeps the candidates that satisfy every constraint: an edge (of the
/// required relation, when one is given) to at least one member of each
/// constraint set. Performs no LLM calls.
pub fn structural_alignment_filter(
    kg: &KnowledgeGraph,
    candidates: &BTreeSet<EntityId>,
    constraints: &[(BTreeSet<EntityId>, Option<RelationId>)],
) -> BTreeSet<EntityId> {
    candidates
        .iter()
        .filter(|candidate| {
            constraints.iter().all(|(set, required)| {
                set.iter()
                    .any(|member| kg.has_edge(candidate, member, required.as_ref()))
            })
        })
        .cloned()
        .collect()
}

/// Result of a holistic alignment pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentOutcome {
    pub mapping: ClueMapping,
    /// Entities deleted per clue, in deletion order.
    pub removed: BTreeMap<ClueId, Vec<EntityId>>,
    /// Clues whose sets were emptied (and therefore unmapped).
    pub emptied: BTreeSet<ClueId>,
}

/// Propagates pairwise support to a fixpoint: along every guidance edge with
/// both endpoints mapped, an entity survives only while some entity on the
/// other side is connected to it (by the edge's grounded relation when one
/// exists). Sets emptied along the way keep constraining their neighbors
/// until the fixpoint, then are removed from the mapping. The result is
/// independent of edge visit order; no LLM calls are made.
pub fn holistic_alignment(
    gg: &GuidanceGraph,
    kg: &KnowledgeGraph,
    mapping: &ClueMapping,
) -> AlignmentOutcome {
    let mut sets: BTreeMap<ClueId, BTreeSet<EntityId>> = mapping.node_map().clone();
    let mut removed: BTreeMap<ClueId, Vec<EntityId>> = BTreeMap::new();
    let edges: Vec<&ClueEdge> = gg
        .edges()
        .filter(|e| sets.contains_key(&e.head) && sets.contains_key(&e.tail))
        .collect();

    fn revise(
        kg: &KnowledgeGraph,
        sets: &mut BTreeMap<ClueId, BTreeSet<EntityId>>,
        this: &ClueId,
        other: &ClueId,
        required: Option<&RelationId>,
        removed: &mut BTreeMap<ClueId, Vec<EntityId>>,
    ) -> bool {
        let support = sets.get(other).cloned().unwrap_or_default();
        let set = sets.get_mut(this).expect("clue present during alignment");
        let before = set.len();
        let mut gone = Vec::new();
        set.retain(|entity| {
            let supported = support.iter().any(|s| kg.has_edge(entity, s, required));
            if !supported {
                gone.push(entity.clone());
            }
            supported
        });
        if !gone.is_empty() {
            removed.entry(this.clone()).or_default().extend(gone);
        }
        set.len() != before
    }

    loop {
        let mut changed = false;
        for edge in &edges {
            let required = mapping.grounded(edge);
            changed |= revise(kg, &mut sets, &edge.head, &edge.tail, required, &mut removed);
            changed |= revise(kg, &mut sets, &edge.tail, &edge.head, required, &mut removed);
        }
        if !changed {
            break;
        }
    }

    let emptied: BTreeSet<ClueId> = sets
        .iter()
        .filter(|(_, s)| s.is_empty())
        .map(|(c, _)| c.clone())
        .collect();
    AlignmentOutcome {
        mapping: mapping.with_aligned_sets(sets),
        removed,
        emptied,
    }
}

/// Collects, for every grounded guidance edge, all knowledge triples of the
/// grounded relation joining the two mapped sets, stored direction
/// preserved.
pub fn assemble_subgraph(
    _gg: &GuidanceGraph,
    kg: &KnowledgeGraph,
    mapping: &ClueMapping,
) -> BTreeSet<Triple> {
    let mut subgraph = BTreeSet::new();
    for (edge, relation) in mapping.edge_ground() {
        let (Some(heads), Some(tails)) = (mapping.mapped(&edge.head), mapping.mapped(&edge.tail))
        else {
            continue;
        };
        for head in heads {
            for (r, neighbor, direction) in kg.neighbors(head) {
                if &r == relation && tails.contains(&neighbor) {
                    let triple = match direction {
                        crate::kg::Direction::Out => Triple {
                            subject: head.clone(),
                            relation: r,
                            object: neighbor,
                        },
                        crate::kg::Direction::In => Triple {
                            subject: neighbor,
                            relation: r,
                            object: head.clone(),
                        },
                    };
                    subgraph.insert(triple);
                }
            }
        }
    }
    subgraph
}

/// Runs a full exploration of `gg` against `kg`.
pub fn explore(
    gg: &GuidanceGraph,
    kg: &KnowledgeGraph,
    gateway: &LlmGateway,
    config: &ExplorerConfig,
    question_id: &str,
) -> (ExplorationOutcome, ExplorationTrace) {
    Exploration::new(gg, kg, gateway, config, question_id).run()
}

// splitmix64; used only for the optional seeded target choice.
struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

enum TargetResult {
    Mapped,
    Exhausted,
    RoundLimit,
}

enum PruneStep {
    Pruned(RelationId, BTreeSet<EntityId>),
    Failed(&'static str),
}

struct Exploration<'a> {
    gg: &'a GuidanceGraph,
    kg: &'a KnowledgeGraph,
    gateway: &'a LlmGateway,
    config: &'a ExplorerConfig,
    question_id: String,
    mapping: ClueMapping,
    trace: ExplorationTrace,
    exhausted: BTreeSet<ClueId>,
    rounds_used: usize,
    max_rounds: usize,
    rng: Option<SplitMix64>,
}

impl<'a> Exploration<'a> {
    fn new(
        gg: &'a GuidanceGraph,
        kg: &'a KnowledgeGraph,
        gateway: &'a LlmGateway,
        config: &'a ExplorerConfig,
        question_id: &str,
    ) -> Self {
        Exploration {
            gg,
            kg,
            gateway,
            config,
            question_id: question_id.to_string(),
            mapping: ClueMapping::default(),
            trace: ExplorationTrace::default(),
            exhausted: BTreeSet::new(),
            rounds_used: 0,
            max_rounds: config.max_rounds.unwrap_or(2 * gg.node_count()),
            rng: config.seed.map(SplitMix64),
        }
    }

    fn run(mut self) -> (ExplorationOutcome, ExplorationTrace) {
        let outcome = match self.run_inner() {
            Ok(outcome) => outcome,
            Err(detail) => {
                self.trace.push(TraceEvent::ProviderAborted { detail });
                ExplorationOutcome::Fallback {
                    reason: FallbackReason::ConstructionFailed,
                }
            }
        };
        self.trace.push(TraceEvent::Completed {
            outcome: outcome.label(),
            rounds: self.rounds_used,
        });
        (outcome, self.trace)
    }

    fn run_inner(&mut self) -> Result<ExplorationOutcome, String> {
        self.mapping = find_starting_points(self.gg, self.kg);
        self.trace.push(TraceEvent::StartingPoints {
            resolved: self
                .mapping
                .node_map()
                .iter()
                .map(|(c, set)| {
                    (
                        c.to_string(),
                        set.iter().map(|e| e.to_string()).collect(),
                    )
                })
                .collect(),
        });
        if self.mapping.node_map().is_empty() {
            return Ok(ExplorationOutcome::Fallback {
                reason: FallbackReason::NoStartingPoint,
            });
        }

        // Components reachable from a starting point; clues elsewhere cannot
        // contribute knowledge and do not block success.
        let starting: BTreeSet<ClueId> = self.mapping.node_map().keys().cloned().collect();
        let active: BTreeSet<ClueId> = self
            .gg
            .components()
            .into_iter()
            .filter(|component| component.iter().any(|c| starting.contains(c)))
            .flatten()
            .collect();

        let mut limit_hit = false;
        loop {
            let candidates = eligible_targets(self.gg, &self.mapping, &self.exhausted);
            if candidates.is_empty() {
                break;
            }
            let index = match &mut self.rng {
                Some(rng) => (rng.next_u64() % candidates.len() as u64) as usize,
                None => 0,
            };
            let target = candidates[index].clone();
            self.trace.push(TraceEvent::TargetSelected {
                round: self.rounds_used + 1,
                target: target.to_string(),
                contexts: contexts_of(self.gg, &self.mapping, &target).len(),
            });
            match self.attempt_target(&target)? {
                TargetResult::Mapped => {}
                TargetResult::Exhausted => {
                    self.exhausted.insert(target);
                }
                TargetResult::RoundLimit => {
                    limit_hit = true;
                    break;
                }
            }
        }

        self.ground_residual_edges()?;

        let complete = active
            .iter()
            .filter(|c| !self.mapping.pruned().contains(*c))
            .all(|c| self.mapping.is_mapped(c));
        if complete {
            Ok(ExplorationOutcome::Grounded {
                subgraph: assemble_subgraph(self.gg, self.kg, &self.mapping),
                mapping: self.mapping.clone(),
            })
        } else if limit_hit {
            Ok(ExplorationOutcome::Fallback {
                reason: FallbackReason::RoundLimit,
            })
        } else {
            Ok(ExplorationOutcome::Fallback {
                reason: FallbackReason::PruningExhausted,
            })
        }
    }

    /// Tries to map one target, re-rooting through branch selection on
    /// pruning failures. Each pruning attempt consumes one round.
    fn attempt_target(&mut self, target: &ClueId) -> Result<TargetResult, String> {
        // Contexts whose phrase already failed for this target.
        let mut banned: BTreeSet<ClueEdge> = BTreeSet::new();
        // After a branch decision, the winning context leads the retry.
        let mut forced: Option<EdgeContext> = None;

        loop {
            if self.rounds_used >= self.max_rounds {
                return Ok(TargetResult::RoundLimit);
            }
            let usable: Vec<EdgeContext> = contexts_of(self.gg, &self.mapping, target)
                .into_iter()
                .filter(|c| !banned.contains(&c.edge))
                .collect();
            let current = match forced.take() {
                Some(ctx)
                    if self.mapping.is_mapped(&ctx.mapped_clue) && !banned.contains(&ctx.edge) =>
                {
                    ctx
                }
                _ => match usable.first() {
                    Some(ctx) => ctx.clone(),
                    None => {
                        self.trace.push(TraceEvent::TargetExhausted {
                            round: self.rounds_used,
                            target: target.to_string(),
                        });
                        return Ok(TargetResult::Exhausted);
                    }
                },
            };

            self.rounds_used += 1;
            match self.context_pruning(target, &current)? {
                PruneStep::Pruned(relation, entities) => {
                    self.mapping.insert(target.clone(), entities);
                    self.mapping.ground(current.edge.clone(), relation);
                    self.apply_holistic();
                    return Ok(TargetResult::Mapped);
                }
                PruneStep::Failed(reason) => {
                    self.trace.push(TraceEvent::PruningFailed {
                        round: self.rounds_used,
                        target: target.to_string(),
                        context_clue: current.mapped_clue.to_string(),
                        reason: reason.to_string(),
                    });
                    banned.insert(current.edge.clone());

                    let alternative = if self.config.branch_selection {
                        contexts_of(self.gg, &self.mapping, target)
                            .into_iter()
                            .find(|c| !banned.contains(&c.edge))
                    } else {
                        None
                    };
                    let Some(alternative) = alternative else {
                        self.trace.push(TraceEvent::TargetExhausted {
                            round: self.rounds_used,
                            target: target.to_string(),
                        });
                        return Ok(TargetResult::Exhausted);
                    };

                    let current_phrase = self.gg.edge_phrase(&current.edge);
                    let alternative_phrase = self.gg.edge_phrase(&alternative.edge);
                    let choice = match self.gateway.select_branch(
                        &self.question_id,
                        &current_phrase,
                        &alternative_phrase,
                    ) {
                        Ok(choice) => choice,
                        Err(e) => return Err(e.to_string()),
                    };
                    if choice == 1 {
                        // The related branch wins: its clue drives the retry
                        // and the failed branch's clue is pruned for good.
                        self.trace.push(TraceEvent::BranchDecision {
                            round: self.rounds_used,
                            target: target.to_string(),
                            kept_clue: alternative.mapped_clue.to_string(),
                            pruned_clue: current.mapped_clue.to_string(),
                        });
                        self.mapping.prune(&current.mapped_clue);
                        forced = Some(alternative);
                    } else {
                        self.trace.push(TraceEvent::BranchDecision {
                            round: self.rounds_used,
                            target: target.to_string(),
                            kept_clue: current.mapped_clue.to_string(),
                            pruned_clue: alternative.mapped_clue.to_string(),
                        });
                        self.mapping.prune(&alternative.mapped_clue);
                        self.trace.push(TraceEvent::TargetExhausted {
                            round: self.rounds_used,
                            target: target.to_string(),
                        });
                        return Ok(TargetResult::Exhausted);
                    }
                }
            }
        }
    }

    /// One pruning attempt for `target` through `primary`: candidates from
    /// the primary context's mapped set, structural filtering against every
    /// mapped context, then LLM relation selection over the relations
    /// between the surviving candidates and the primary set.
    fn context_pruning(
        &mut self,
        target: &ClueId,
        primary: &EdgeContext,
    ) -> Result<PruneStep, String> {
        let e_curr = self
            .mapping
            .mapped(&primary.mapped_clue)
            .cloned()
            .expect("primary context is mapped");
        let e_cand = self.kg.candidate_entities(&e_curr);

        let constraints: Vec<(BTreeSet<EntityId>, Option<RelationId>)> =
            contexts_of(self.gg, &self.mapping, target)
                .iter()
                .map(|ctx| {
                    (
                        self.mapping
                            .mapped(&ctx.mapped_clue)
                            .cloned()
                            .unwrap_or_default(),
                        self.mapping.grounded(&ctx.edge).cloned(),
                    )
                })
                .collect();
        let e_valid = if self.config.structural_alignment {
            structural_alignment_filter(self.kg, &e_cand, &constraints)
        } else {
            e_cand.clone()
        };
        self.trace.push(TraceEvent::StructuralFilter {
            round: self.rounds_used,
            target: target.to_string(),
            candidates_before: e_cand.len(),
            candidates_after: e_valid.len(),
        });

        let counts = self.kg.relations_between_counts(&e_valid, &e_curr);
        if counts.is_empty() {
            return Ok(PruneStep::Failed("empty_relation_set"));
        }
        let offered = rank_relations(counts, self.config.relation_cap);
        let phrase = if self.config.context_rich_phrases {
            self.gg.edge_phrase(&primary.edge)
        } else {
            primary.edge.label.clone()
        };
        self.trace.push(TraceEvent::RelationsOffered {
            round: self.rounds_used,
            target: target.to_string(),
            phrase: phrase.clone(),
            relations: offered.clone(),
        });

        match self
            .gateway
            .select_relation(&self.question_id, &phrase, &offered)
        {
            Ok(relation) => {
                let relation = RelationId::new(relation);
                let e_mapping: BTreeSet<EntityId> = e_valid
                    .iter()
                    .filter(|candidate| {
                        e_curr
                            .iter()
                            .any(|member| self.kg.has_edge(candidate, member, Some(&relation)))
                    })
                    .cloned()
                    .collect();
                if e_mapping.is_empty() {
                    return Ok(PruneStep::Failed("empty_mapping"));
                }
                self.trace.push(TraceEvent::RelationChosen {
                    round: self.rounds_used,
                    target: target.to_string(),
                    relation: relation.to_string(),
                    mapped_entities: e_mapping.len(),
                });
                Ok(PruneStep::Pruned(relation, e_mapping))
            }
            Err(GatewayError::Provider(e)) => Err(e.to_string()),
            // An out-of-set pick and an unparseable pick fail the same way:
            // the model named no usable candidate.
            Err(GatewayError::Constraint { .. }) | Err(GatewayError::Task { .. }) => {
                Ok(PruneStep::Failed("constraint_violation"))
            }
        }
    }

    /// Grounds edges both of whose endpoints are mapped but that the loop
    /// never grounded (for example edges between two starting points). A
    /// single-relation candidate set is grounded directly; larger sets go
    /// through relation selection. Ends with one final holistic alignment.
    fn ground_residual_edges(&mut self) -> Result<(), String> {
        let edges: Vec<ClueEdge> = self.gg.edges().cloned().collect();
        for edge in edges {
            if self.mapping.grounded(&edge).is_some() {
                continue;
            }
            let (Some(heads), Some(tails)) = (
                self.mapping.mapped(&edge.head),
                self.mapping.mapped(&edge.tail),
            ) else {
                continue;
            };
            let counts = self.kg.relations_between_counts(heads, tails);
            if counts.is_empty() {
                self.trace.push(TraceEvent::ResidualUngrounded {
                    edge: edge.to_string(),
                    reason: "no_relations".to_string(),
                });
                continue;
            }
            if counts.len() == 1 {
                let relation = counts.into_keys().next().expect("one relation");
                self.trace.push(TraceEvent::ResidualGrounded {
                    edge: edge.to_string(),
                    relation: relation.to_string(),
                    llm: false,
                });
                self.mapping.ground(edge, relation);
                continue;
            }
            let offered = rank_relations(counts, self.config.relation_cap);
            let phrase = if self.config.context_rich_phrases {
                self.gg.edge_phrase(&edge)
            } else {
                edge.label.clone()
            };
            match self
                .gateway
                .select_relation(&self.question_id, &phrase, &offered)
            {
                Ok(relation) => {
                    let relation = RelationId::new(relation);
                    self.trace.push(TraceEvent::ResidualGrounded {
                        edge: edge.to_string(),
                        relation: relation.to_string(),
                        llm: true,
                    });
                    self.mapping.ground(edge, relation);
                }
                Err(GatewayError::Provider(e)) => return Err(e.to_string()),
                Err(other) => {
                    self.trace.push(TraceEvent::ResidualUngrounded {
                        edge: edge.to_string(),
                        reason: other.to_string(),
                    });
                }
            }
        }
        self.apply_holistic();
        Ok(())
    }

    fn apply_holistic(&mut self) {
        if !self.config.structural_alignment {
            return;
        }
        let outcome = holistic_alignment(self.gg, self.kg, &self.mapping);
        for (clue, removed) in &outcome.removed {
            self.trace.push(TraceEvent::HolisticRemoval {
                clue: clue.to_string(),
                removed: removed.iter().map(|e| e.to_string()).collect(),
                emptied: outcome.emptied.contains(clue),
            });
        }
        self.mapping = outcome.mapping;
    }
}

fn rank_relations(counts: BTreeMap<RelationId, usize>, cap: usize) -> Vec<String> {
    let mut ranked: Vec<(usize, RelationId)> =
        counts.into_iter().map(|(r, c)| (c, r)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(cap);
    ranked.into_iter().map(|(_, r)| r.to_string()).collect()
}
