//! Greedy evidence chains: from a candidate, follow the strongest retained
//! in-edge of each step back to a topic entity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::explorer::{AttentionRecord, ExplorationResult};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, RelationKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStep {
    pub step: usize,
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidencePath {
    pub candidate: EntityId,
    /// Ordered from the first step onward; the last tail is the candidate.
    pub steps: Vec<PathStep>,
    /// The candidate dropped out of the frontier before the final step, so
    /// the chain stops at the step where it was last present.
    pub partial: bool,
}

impl EvidencePath {
    pub fn start(&self) -> EntityId {
        self.steps.first().map(|s| s.head).unwrap_or(self.candidate)
    }
}

fn stronger(a: &AttentionRecord, b: &AttentionRecord) -> bool {
    a.weight
        .total_cmp(&b.weight)
        .then(b.relation.cmp(&a.relation))
        .then(b.head.cmp(&a.head))
        .is_gt()
}

/// Ties on weight go to the lower relation id, then the lower head id.
pub fn backtrack(result: &ExplorationResult, candidate: EntityId) -> Result<EvidencePath> {
    let idx = result
        .candidate_index(candidate)
        .ok_or_else(|| Error::Precondition(format!("entity {candidate} is not an explored candidate")))?;
    let last = result.latest_step[idx];
    let mut cursor = candidate;
    let mut steps = Vec::with_capacity(last);
    let mut partial = last < result.num_steps();
    for l in (1..=last).rev() {
        let best = result.steps[l - 1]
            .retained_in_edges(cursor)
            .fold(None::<&AttentionRecord>, |best, e| match best {
                Some(b) if !stronger(e, b) => Some(b),
                _ => Some(e),
            });
        let Some(e) = best else {
            partial = true;
            break;
        };
        steps.push(PathStep {
            step: l,
            head: e.head,
            relation: e.relation,
            tail: e.tail,
            weight: e.weight,
        });
        cursor = e.head;
    }
    steps.reverse();
    Ok(EvidencePath {
        candidate,
        steps,
        partial,
    })
}

/// A base-direction fact as shown to the language model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Fact {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl std::fmt::Display for Fact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Drops identity steps and flips reverse edges back to their base direction.
pub fn path_facts(path: &EvidencePath, kg: &KnowledgeGraph) -> Vec<Fact> {
    path.steps
        .iter()
        .filter_map(|s| {
            let (h, r, t) = match kg.relation_kind(s.relation) {
                RelationKind::Identity => return None,
                RelationKind::Base(r) => (s.head, r, s.tail),
                RelationKind::Reverse(r) => (s.tail, r, s.head),
            };
            Some(Fact {
                head: kg.entity_name(h).to_owned(),
                relation: kg.relation_name(r).to_owned(),
                tail: kg.entity_name(t).to_owned(),
            })
        })
        .collect()
}

/// `"(head, relation, tail)"` strings in step order.
pub fn render_path(path: &EvidencePath, kg: &KnowledgeGraph) -> Vec<String> {
    path_facts(path, kg).iter().map(ToString::to_string).collect()
}
