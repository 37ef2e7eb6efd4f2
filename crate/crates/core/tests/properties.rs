use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use etd_core::encoding::{RawEmbedding, RelationTable, RelationTexts};
use etd_core::evidence::backtrack;
use etd_core::explorer::{attention_scores, explore, score_candidates, ExplorationResult};
use etd_core::model::ScorerParams;
use etd_core::tensor::Matrix;
use etd_core::{EntityId, KnowledgeGraph, Model, ModelShape};

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

struct Fixture {
    kg: KnowledgeGraph,
    topic: EntityId,
    top_k: usize,
    result: ExplorationResult,
}

fn fixture(seed: u64, entities: usize, extra: usize, top_k: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for i in 1..entities {
        let h = rng.gen_range(0..i);
        triples.push((format!("e{h}"), format!("r{}", rng.gen_range(0..3)), format!("e{i}")));
    }
    for _ in 0..extra {
        let (h, t) = (rng.gen_range(0..entities), rng.gen_range(0..entities));
        triples.push((format!("e{h}"), format!("r{}", rng.gen_range(0..3)), format!("e{t}")));
    }
    let kg = KnowledgeGraph::from_named_triples(triples);
    let d_l = 5;
    let texts = RelationTexts::from_raw(
        (0..kg.num_base_relations())
            .map(|_| RawEmbedding(rvec(&mut rng, d_l)))
            .collect(),
    );
    let shape = ModelShape {
        d: 4,
        d_l,
        steps: 3,
        top_k,
    };
    let model = Model::init(shape, &mut rng).unwrap();
    let table = RelationTable::build(&model.encoder, &texts).unwrap();
    let topic = EntityId(rng.gen_range(0..kg.num_entities()) as u32);
    let h_q = model.encoder.project(&RawEmbedding(rvec(&mut rng, d_l))).unwrap();
    let result = explore(&kg, &model, &table, &h_q, &[topic]).unwrap();
    Fixture {
        kg,
        topic,
        top_k,
        result,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_ignores_edge_order(seed in any::<u64>(), n in 1usize..20, shift in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(ModelShape { d: 6, d_l: 3, steps: 1, top_k: 1 }, &mut rng).unwrap();
        let p = &model.explorer.steps[0];
        let h_q = rvec(&mut rng, 6);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|_| (rvec(&mut rng, 6), rvec(&mut rng, 6))).collect();
        let edges: Vec<(&[f64], &[f64])> = pairs.iter().map(|(s, r)| (s.as_slice(), r.as_slice())).collect();
        let mut rotated = edges.clone();
        rotated.rotate_left(shift % n);
        let a = attention_scores(p, &edges, &h_q);
        let mut b = attention_scores(p, &rotated, &h_q);
        b.rotate_right(shift % n);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), n in 1usize..60, scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 5;
        let mut hidden = Matrix::zeros(d, 2 * d);
        hidden.as_mut_slice().iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
        let scorer = ScorerParams {
            hidden,
            hidden_bias: rvec(&mut rng, d),
            out: rvec(&mut rng, d),
            out_bias: rng.gen_range(-5.0..5.0),
        };
        let reps: Vec<Vec<f64>> = (0..n).map(|_| rvec(&mut rng, d)).collect();
        let refs: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
        let s = score_candidates(&scorer, &refs, &rvec(&mut rng, d)).unwrap();
        assert_abs_diff_eq!(s.probabilities.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        prop_assert!(s.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn pruning_keeps_the_strongest_k(seed in any::<u64>(), top_k in 1usize..5) {
        let f = fixture(seed, 15, 20, top_k);
        for step in &f.result.steps {
            let mut by_head: HashMap<EntityId, (usize, f64, f64)> = HashMap::new();
            for e in &step.edges {
                let g = by_head.entry(e.head).or_insert((0, f64::INFINITY, f64::NEG_INFINITY));
                if e.retained {
                    g.0 += 1;
                    g.1 = g.1.min(e.weight);
                } else {
                    g.2 = g.2.max(e.weight);
                }
            }
            for (head, (kept, min_kept, max_dropped)) in by_head {
                prop_assert!(kept <= f.top_k, "head {} kept {}", head, kept);
                prop_assert!(kept >= 1);
                prop_assert!(min_kept >= max_dropped, "head {}: pruned edge outranks a kept one", head);
            }
        }
    }

    #[test]
    fn evidence_paths_are_connected(seed in any::<u64>(), top_k in 1usize..4) {
        let f = fixture(seed, 12, 10, top_k);
        for (i, &cand) in f.result.candidates.iter().enumerate() {
            let path = backtrack(&f.result, cand).unwrap();
            prop_assert_eq!(path.steps.len(), f.result.latest_step[i]);
            prop_assert_eq!(path.start(), f.topic);
            if let Some(last) = path.steps.last() {
                prop_assert_eq!(last.tail, cand);
            }
            for w in path.steps.windows(2) {
                prop_assert_eq!(w[0].tail, w[1].head);
            }
            for s in &path.steps {
                let stored = f.kg.out_edges(s.head).contains(&(s.relation, s.tail));
                prop_assert!(stored || (s.relation == f.kg.identity_relation() && s.head == s.tail));
            }
        }
    }
}
