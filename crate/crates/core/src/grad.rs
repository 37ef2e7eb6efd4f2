//! Cross-entropy loss over explored candidates and its exact reverse-mode
//! gradient through scoring, propagation, attention and the encoder maps.
//!
//! Top-K selection is treated as a constant: only retained edges contribute,
//! so a pruned edge never routes gradient to anything.

use crate::encoding::{RawEmbedding, RelationTable, RelationTexts};
use crate::error::{Error, Result};
use crate::explorer::ExplorationResult;
use crate::kg::{EntityId, KnowledgeGraph, RelationKind};
use crate::model::Model;
use crate::tensor::{add_assign, axpy};

/// Probability floor for answers outside the candidate set.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub answers: usize,
    /// Answers that did not make it into the candidate set.
    pub missed: usize,
}

impl LossStats {
    pub fn merge(&mut self, other: LossStats) {
        self.loss += other.loss;
        self.answers += other.answers;
        self.missed += other.missed;
    }
}

/// `Σ_a −log p(q, a)` with `p` clamped at [`PROB_EPSILON`].
pub fn question_loss(result: &ExplorationResult, answers: &[EntityId]) -> LossStats {
    let mut stats = LossStats::default();
    for &a in answers {
        stats.answers += 1;
        match result.probability(a) {
            Some(p) => stats.loss -= p.max(PROB_EPSILON).ln(),
            None => {
                stats.missed += 1;
                stats.loss -= PROB_EPSILON.ln();
            }
        }
    }
    stats
}

/// Accumulates `∂loss/∂θ` for one explored question into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    kg: &KnowledgeGraph,
    model: &Model,
    texts: &RelationTexts,
    table: &RelationTable,
    raw_q: &RawEmbedding,
    result: &ExplorationResult,
    answers: &[EntityId],
    grads: &mut Model,
) -> Result<LossStats> {
    let stats = question_loss(result, answers);
    let d = model.dim();
    let probs = &result.probabilities;

    let mut dlogits = vec![0.0; probs.len()];
    for &a in answers {
        let Some(i) = result.candidate_index(a) else { continue };
        if probs[i] <= PROB_EPSILON {
            continue;
        }
        axpy(&mut dlogits, 1.0, probs);
        dlogits[i] -= 1.0;
    }
    if dlogits.iter().all(|&g| g == 0.0) {
        return Ok(stats);
    }

    let h_q = &result.h_q;
    let mut dh_q = vec![0.0; d];
    // gradient w.r.t. every frontier representation, indexed [step][position]
    let mut dfront: Vec<Vec<Vec<f64>>> = (0..=result.num_steps())
        .map(|l| vec![vec![0.0; d]; result.frontier(l).len()])
        .collect();

    // scorer
    let scorer = &model.explorer.scorer;
    let gs = &mut grads.explorer.scorer;
    let mut x = vec![0.0; 2 * d];
    x[d..].copy_from_slice(h_q);
    for (i, &dl) in dlogits.iter().enumerate() {
        if dl == 0.0 {
            continue;
        }
        let e = result.candidates[i];
        let step = result.latest_step[i];
        let frontier = result.frontier(step);
        let pos = frontier.position(e).expect("candidate in its latest frontier");
        x[..d].copy_from_slice(&frontier.reps[pos]);
        let g = &result.scores.hidden_pre[i];
        let mut dg = vec![0.0; d];
        for k in 0..d {
            if g[k] > 0.0 {
                gs.out[k] += dl * g[k];
                dg[k] = dl * scorer.out[k];
            }
        }
        gs.out_bias += dl;
        gs.hidden.add_outer(&dg, &x);
        add_assign(&mut gs.hidden_bias, &dg);
        let dx = scorer.hidden.matvec_t(&dg);
        add_assign(&mut dfront[step][pos], &dx[..d]);
        add_assign(&mut dh_q, &dx[d..]);
    }

    // steps, last to first
    let mut drel: Vec<Option<Vec<f64>>> = vec![None; table.len()];
    for l in (1..=result.num_steps()).rev() {
        let rec = &result.steps[l - 1];
        let p = &model.explorer.steps[l - 1];
        let prev = result.frontier(l - 1);
        let (dcur, dprev_all) = {
            let (lo, hi) = dfront.split_at_mut(l);
            (&hi[0], &mut lo[l - 1])
        };
        let gstep = &mut grads.explorer.steps[l - 1];

        let mut dmsg: Vec<Option<Vec<f64>>> = Vec::with_capacity(rec.frontier.len());
        for (pos, dh) in dcur.iter().enumerate() {
            let u = &rec.preacts[pos];
            let du: Vec<f64> = dh
                .iter()
                .zip(u)
                .map(|(g, &ui)| if ui > 0.0 { *g } else { 0.0 })
                .collect();
            if du.iter().all(|&v| v == 0.0) {
                dmsg.push(None);
                continue;
            }
            gstep.propagate.add_outer(&du, &rec.messages[pos]);
            dmsg.push(Some(p.propagate.matvec_t(&du)));
        }

        for e in rec.retained() {
            let tpos = rec.frontier.position(e.tail).expect("retained tail in frontier");
            let Some(dm) = &dmsg[tpos] else { continue };
            let hpos = prev.position(e.head).expect("retained head in previous frontier");
            let h_s = &prev.reps[hpos];
            let h_r = table.get(e.relation);
            let alpha = e.weight;

            let mut dalpha = 0.0;
            for k in 0..d {
                dalpha += dm[k] * h_s[k] * h_r[k];
            }
            let dprev = &mut dprev_all[hpos];
            let dr = drel[e.relation.index()].get_or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                dprev[k] += alpha * dm[k] * h_r[k];
                dr[k] += alpha * dm[k] * h_s[k];
            }

            let dz = dalpha * alpha * (1.0 - alpha);
            if dz == 0.0 {
                continue;
            }
            axpy(&mut gstep.att_head, dz, h_s);
            axpy(&mut gstep.att_relation, dz, h_r);
            axpy(&mut gstep.att_question, dz, h_q);
            for k in 0..d {
                gstep.att_joint[k] += dz * h_r[k] * h_q[k];
                dprev[k] += dz * p.att_head[k];
                dr[k] += dz * (p.att_relation[k] + p.att_joint[k] * h_q[k]);
                dh_q[k] += dz * (p.att_question[k] + p.att_joint[k] * h_r[k]);
            }
        }
    }

    // topic entities start from h_q
    for g in &dfront[0] {
        add_assign(&mut dh_q, g);
    }

    // relation embeddings back to the encoder parameters
    let enc = &model.encoder;
    let genc = &mut grads.encoder;
    let mut dbase: Vec<Option<Vec<f64>>> = vec![None; texts.num_base()];
    for (idx, dr) in drel.iter().enumerate() {
        let Some(dr) = dr else { continue };
        match kg.relation_kind(crate::kg::RelationId(idx as u32)) {
            RelationKind::Identity => add_assign(&mut genc.h_id, dr),
            RelationKind::Base(b) => {
                add_assign(dbase[b.index()].get_or_insert_with(|| vec![0.0; d]), dr);
            }
            RelationKind::Reverse(b) => {
                genc.w_neg.add_outer(dr, table.get(b));
                add_assign(&mut genc.b_neg, dr);
                let back = enc.w_neg.matvec_t(dr);
                add_assign(dbase[b.index()].get_or_insert_with(|| vec![0.0; d]), &back);
            }
        }
    }
    for (b, db) in dbase.iter().enumerate() {
        if let Some(db) = db {
            genc.w_l.add_outer(db, texts.raw(crate::kg::RelationId(b as u32)).as_slice());
        }
    }
    genc.w_l.add_outer(&dh_q, raw_q.as_slice());

    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok(stats)
}
