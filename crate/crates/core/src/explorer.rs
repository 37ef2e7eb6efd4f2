//! Step-wise semantic exploration: attention-scored frontier expansion with
//! per-head top-K pruning, gated message propagation, and candidate scoring.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::model::{Model, ScorerParams, StepParams};
use crate::encoding::RelationTable;
use crate::tensor::{axpy, dot, relu, sigmoid, softmax};

/// Pruned candidate set of one step with a representation per member.
/// Entities are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierState {
    pub step: usize,
    pub entities: Vec<EntityId>,
    #[serde(skip)]
    pub reps: Vec<Vec<f64>>,
}

impl FrontierState {
    /// Topic entities, each carrying the question encoding.
    pub fn initial(topics: &[EntityId], h_q: &[f64]) -> Self {
        let mut entities = topics.to_vec();
        entities.sort_unstable();
        entities.dedup();
        let reps = vec![h_q.to_vec(); entities.len()];
        Self {
            step: 0,
            entities,
            reps,
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn position(&self, e: EntityId) -> Option<usize> {
        self.entities.binary_search(&e).ok()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.position(e).is_some()
    }

    pub fn rep(&self, e: EntityId) -> Option<&[f64]> {
        self.position(e).map(|i| self.reps[i].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionRecord {
    pub step: usize,
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub weight: f64,
    pub retained: bool,
}

/// One exploration step: every scored edge plus the resulting frontier.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// All candidate edges (stored and identity), sorted by `(head, relation, tail)`.
    pub edges: Vec<AttentionRecord>,
    pub frontier: FrontierState,
    /// Aggregated messages aligned with `frontier.entities`, before the transform.
    #[serde(skip)]
    pub(crate) messages: Vec<Vec<f64>>,
    /// `W · message`, before the activation.
    #[serde(skip)]
    pub(crate) preacts: Vec<Vec<f64>>,
}

impl StepRecord {
    pub fn retained(&self) -> impl Iterator<Item = &AttentionRecord> {
        self.edges.iter().filter(|e| e.retained)
    }

    pub fn num_retained(&self) -> usize {
        self.retained().count()
    }

    /// Retained edges whose tail is `e`.
    pub fn retained_in_edges(&self, e: EntityId) -> impl Iterator<Item = &AttentionRecord> {
        self.retained().filter(move |r| r.tail == e)
    }
}

/// Candidate logits and probabilities plus the scorer's hidden pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub(crate) hidden_pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub frontier_size: usize,
    pub candidate_edges: usize,
    pub retained_edges: usize,
    pub max_retained_per_head: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplorationResult {
    pub topics: Vec<EntityId>,
    #[serde(skip)]
    pub h_q: Vec<f64>,
    pub initial: FrontierState,
    pub steps: Vec<StepRecord>,
    /// Union of all frontiers, sorted by id.
    pub candidates: Vec<EntityId>,
    /// Aligned with `candidates`.
    pub probabilities: Vec<f64>,
    /// Step whose representation scored each candidate.
    pub latest_step: Vec<usize>,
    pub dead_end: bool,
    #[serde(skip)]
    pub(crate) scores: Scores,
}

impl ExplorationResult {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn frontier(&self, step: usize) -> &FrontierState {
        if step == 0 {
            &self.initial
        } else {
            &self.steps[step - 1].frontier
        }
    }

    pub fn candidate_index(&self, e: EntityId) -> Option<usize> {
        self.candidates.binary_search(&e).ok()
    }

    pub fn probability(&self, e: EntityId) -> Option<f64> {
        self.candidate_index(e).map(|i| self.probabilities[i])
    }

    /// Candidate representation used for scoring.
    pub fn representation(&self, e: EntityId) -> Option<&[f64]> {
        let i = self.candidate_index(e)?;
        self.frontier(self.latest_step[i]).rep(e)
    }

    pub fn logits(&self) -> &[f64] {
        &self.scores.logits
    }

    /// Candidates by probability, highest first; ties go to the lower id.
    pub fn ranked(&self) -> Vec<(EntityId, f64)> {
        let mut out: Vec<(EntityId, f64)> = self
            .candidates
            .iter()
            .copied()
            .zip(self.probabilities.iter().copied())
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn top1(&self) -> Option<EntityId> {
        self.ranked().first().map(|(e, _)| *e)
    }

    pub fn step_stats(&self) -> Vec<StepStats> {
        self.steps
            .iter()
            .map(|s| {
                let mut per_head: BTreeMap<EntityId, usize> = BTreeMap::new();
                for e in s.retained() {
                    *per_head.entry(e.head).or_default() += 1;
                }
                StepStats {
                    step: s.step,
                    frontier_size: s.frontier.len(),
                    candidate_edges: s.edges.len(),
                    retained_edges: s.num_retained(),
                    max_retained_per_head: per_head.values().copied().max().unwrap_or(0),
                }
            })
            .collect()
    }
}

/// Relation-dependent part of the attention logit: `W_r·h_r + W_qr·(h_r ⊙ h_q)`.
fn relation_term(p: &StepParams, h_r: &[f64], h_q: &[f64]) -> f64 {
    let joint: f64 = p
        .att_joint
        .iter()
        .zip(h_r)
        .zip(h_q)
        .map(|((w, r), q)| w * r * q)
        .sum();
    dot(&p.att_relation, h_r) + joint
}

fn attention_logit(p: &StepParams, h_s: &[f64], rel_term: f64, q_term: f64) -> f64 {
    dot(&p.att_head, h_s) + rel_term + q_term
}

/// `σ(W_s·h_s + W_r·h_r + W_q·h_q + W_qr·(h_r ⊙ h_q))` for each `(h_s, h_r)` pair.
pub fn attention_scores(p: &StepParams, edges: &[(&[f64], &[f64])], h_q: &[f64]) -> Vec<f64> {
    let q_term = dot(&p.att_question, h_q);
    edges
        .iter()
        .map(|(h_s, h_r)| sigmoid(attention_logit(p, h_s, relation_term(p, h_r, h_q), q_term)))
        .collect()
}

/// Scores every out-edge of the frontier plus one identity self-loop per
/// frontier entity, then keeps the top `top_k` per head by
/// `(weight desc, relation asc, tail asc)`.
pub fn expand_and_prune(
    kg: &KnowledgeGraph,
    p: &StepParams,
    step: usize,
    top_k: usize,
    frontier: &FrontierState,
    relations: &RelationTable,
    h_q: &[f64],
) -> Vec<AttentionRecord> {
    let identity = kg.identity_relation();
    let q_term = dot(&p.att_question, h_q);
    let mut rel_terms: Vec<Option<f64>> = vec![None; relations.len()];
    let mut rel_term = |rel: RelationId| -> f64 {
        *rel_terms[rel.index()].get_or_insert_with(|| relation_term(p, relations.get(rel), h_q))
    };

    let mut out = Vec::new();
    for (head, h_s) in frontier.entities.iter().zip(&frontier.reps) {
        let head_term = dot(&p.att_head, h_s);
        let start = out.len();
        let stored = kg.out_edges(*head).iter().copied();
        for (relation, tail) in stored.chain(std::iter::once((identity, *head))) {
            let z = head_term + rel_term(relation) + q_term;
            out.push(AttentionRecord {
                step,
                head: *head,
                relation,
                tail,
                weight: sigmoid(z),
                retained: false,
            });
        }
        let group = &mut out[start..];
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (&group[a], &group[b]);
            eb.weight
                .total_cmp(&ea.weight)
                .then(ea.relation.cmp(&eb.relation))
                .then(ea.tail.cmp(&eb.tail))
        });
        for &i in order.iter().take(top_k) {
            group[i].retained = true;
        }
    }
    out
}

/// New frontier from retained edges: `h_o = ReLU(W · Σ α (h_s ⊙ h_r))`.
pub fn propagate(
    p: &StepParams,
    step: usize,
    edges: &[AttentionRecord],
    prev: &FrontierState,
    relations: &RelationTable,
) -> (FrontierState, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = p.propagate.rows();
    let mut messages: BTreeMap<EntityId, Vec<f64>> = BTreeMap::new();
    for e in edges.iter().filter(|e| e.retained) {
        let h_s = prev
            .rep(e.head)
            .expect("retained edge head must belong to the previous frontier");
        let h_r = relations.get(e.relation);
        let m = messages.entry(e.tail).or_insert_with(|| vec![0.0; d]);
        for ((mi, s), r) in m.iter_mut().zip(h_s).zip(h_r) {
            *mi += e.weight * (s * r);
        }
    }
    let mut entities = Vec::with_capacity(messages.len());
    let mut msgs = Vec::with_capacity(messages.len());
    let mut preacts = Vec::with_capacity(messages.len());
    let mut reps = Vec::with_capacity(messages.len());
    for (e, m) in messages {
        let u = p.propagate.matvec(&m);
        reps.push(relu(&u));
        entities.push(e);
        preacts.push(u);
        msgs.push(m);
    }
    (
        FrontierState {
            step,
            entities,
            reps,
        },
        msgs,
        preacts,
    )
}

/// Softmax over `MLP([h_e ; h_q])` logits.
pub fn score_candidates(s: &ScorerParams, reps: &[&[f64]], h_q: &[f64]) -> Result<Scores> {
    if reps.is_empty() {
        return Err(Error::NoCandidates);
    }
    let d = h_q.len();
    let mut logits = Vec::with_capacity(reps.len());
    let mut hidden_pre = Vec::with_capacity(reps.len());
    let mut x = vec![0.0; 2 * d];
    x[d..].copy_from_slice(h_q);
    for rep in reps {
        x[..d].copy_from_slice(rep);
        let mut g = s.hidden.matvec(&x);
        axpy(&mut g, 1.0, &s.hidden_bias);
        let logit = g
            .iter()
            .zip(&s.out)
            .map(|(gi, wi)| gi.max(0.0) * wi)
            .sum::<f64>()
            + s.out_bias;
        logits.push(logit);
        hidden_pre.push(g);
    }
    let probabilities = softmax(&logits);
    Ok(Scores {
        logits,
        probabilities,
        hidden_pre,
    })
}

/// Runs all steps from the topic entities and scores the union of frontiers.
/// `h_q` is the projected question encoding.
pub fn explore(
    kg: &KnowledgeGraph,
    model: &Model,
    relations: &RelationTable,
    h_q: &[f64],
    topics: &[EntityId],
) -> Result<ExplorationResult> {
    if topics.is_empty() {
        return Err(Error::Precondition("at least one topic entity is required".into()));
    }
    if let Some(bad) = topics.iter().find(|e| e.index() >= kg.num_entities()) {
        return Err(Error::Precondition(format!(
            "topic entity {bad} out of range ({} entities)",
            kg.num_entities()
        )));
    }
    if h_q.len() != model.dim() {
        return Err(Error::Shape(format!(
            "question encoding has {} entries, model dimension is {}",
            h_q.len(),
            model.dim()
        )));
    }

    let initial = FrontierState::initial(topics, h_q);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(model.explorer.num_steps());
    let mut dead_end = false;
    for (i, p) in model.explorer.steps.iter().enumerate() {
        let step = i + 1;
        let prev = steps.last().map(|s| &s.frontier).unwrap_or(&initial);
        if prev.is_empty() {
            dead_end = true;
            break;
        }
        let edges = expand_and_prune(kg, p, step, model.explorer.top_k, prev, relations, h_q);
        let (frontier, messages, preacts) = propagate(p, step, &edges, prev, relations);
        steps.push(StepRecord {
            step,
            edges,
            frontier,
            messages,
            preacts,
        });
    }

    let mut latest: BTreeMap<EntityId, usize> = BTreeMap::new();
    for e in &initial.entities {
        latest.insert(*e, 0);
    }
    for s in &steps {
        for e in &s.frontier.entities {
            latest.insert(*e, s.step);
        }
    }
    let candidates: Vec<EntityId> = latest.keys().copied().collect();
    let latest_step: Vec<usize> = latest.values().copied().collect();
    let reps: Vec<&[f64]> = candidates
        .iter()
        .zip(&latest_step)
        .map(|(e, &l)| {
            let f = if l == 0 { &initial } else { &steps[l - 1].frontier };
            f.rep(*e).expect("candidate has a representation at its latest step")
        })
        .collect();
    let scores = score_candidates(&model.explorer.scorer, &reps, h_q)?;

    Ok(ExplorationResult {
        topics: initial.entities.clone(),
        h_q: h_q.to_vec(),
        initial,
        steps,
        candidates,
        probabilities: scores.probabilities.clone(),
        latest_step,
        dead_end,
        scores,
    })
}
