use std::collections::{BTreeSet, HashMap};

use etd_core::synth::{generate, SynthData, SynthSpec};

type Adjacency = HashMap<(String, String), BTreeSet<String>>;

fn adjacency(data: &SynthData) -> Adjacency {
    let mut adj: Adjacency = HashMap::new();
    for (h, r, t) in &data.triples {
        adj.entry((h.clone(), r.clone())).or_default().insert(t.clone());
    }
    adj
}

/// Relation names in the order the question applies them.
fn chain_relations(question: &str) -> Vec<String> {
    let mut rels: Vec<String> = question
        .split(" the ")
        .skip(1)
        .map(|s| s.trim_end_matches(" of").split(" of ").next().unwrap().to_owned())
        .collect();
    rels.reverse();
    rels
}

fn follow(adj: &Adjacency, topic: &str, rels: &[String]) -> BTreeSet<String> {
    let mut frontier = BTreeSet::from([topic.to_owned()]);
    for r in rels {
        frontier = frontier
            .iter()
            .flat_map(|e| adj.get(&(e.clone(), r.clone())).into_iter().flatten().cloned())
            .collect();
    }
    frontier
}

fn neighbours(data: &SynthData, e: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (h, _, t) in &data.triples {
        if h == e {
            out.insert(t.clone());
        }
        if t == e {
            out.insert(h.clone());
        }
    }
    out
}

fn check_answers(spec: &SynthSpec) -> SynthData {
    let data = generate(spec).unwrap();
    let adj = adjacency(&data);
    let all = data.train.iter().chain(&data.valid).chain(&data.test);
    let mut n = 0;
    for ex in all {
        let rels = chain_relations(&ex.question);
        assert_eq!(rels.len(), spec.hops, "{}", ex.question);
        let reached = follow(&adj, &ex.topic_entities[0], &rels);
        assert_eq!(reached, BTreeSet::from([ex.answers[0].clone()]), "{}", ex.question);
        assert!(
            !neighbours(&data, &ex.topic_entities[0]).contains(&ex.answers[0]),
            "answer adjacent to topic: {}",
            ex.question
        );
        n += 1;
    }
    assert_eq!(n, spec.num_questions());
    data
}

#[test]
fn every_answer_is_the_unique_chain_end() {
    check_answers(&SynthSpec::default());
    check_answers(&SynthSpec {
        entities: 300,
        relations: 9,
        hops: 3,
        max_hops: 3,
        train: 80,
        valid: 10,
        test: 10,
        seed: 3,
        ..SynthSpec::default()
    });
}

#[test]
fn without_distractors_only_chain_edges_exist() {
    let spec = SynthSpec {
        entities: 400,
        distractors: 0,
        train: 100,
        valid: 20,
        test: 20,
        ..SynthSpec::default()
    };
    let data = check_answers(&spec);
    assert_eq!(data.triples.len(), spec.num_questions() * spec.hops);
    // a single undirected route links each topic to its answer
    for chain in &data.chains {
        for w in chain.entities.windows(2) {
            let (a, b) = (spec.entity_name(w[0]), spec.entity_name(w[1]));
            let links = data
                .triples
                .iter()
                .filter(|(h, _, t)| (h == &a && t == &b) || (h == &b && t == &a))
                .count();
            assert_eq!(links, 1);
        }
    }
}
