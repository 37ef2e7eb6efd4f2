//! Synthetic multi-hop composition benchmark.
//!
//! Each question asks for `r_k(… r_1(topic))` along a planted chain. The
//! relations of one pattern are never reused by another, the topic has a
//! single `r_1` out-edge, every chain entity has a single out-edge for the
//! next relation, and the answer is never a direct neighbour of the topic.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::EtdConfig;
use crate::dataset::{write_examples, QaExample};
use crate::error::{Error, Result};

const RELATION_WORDS: [&str; 16] = [
    "mentor", "employer", "birthplace", "founder", "capital", "spouse", "director", "publisher", "sponsor",
    "owner", "landlord", "editor", "coach", "rival", "neighbor", "producer",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub entities: usize,
    pub relations: usize,
    /// Length of the planted composition.
    pub hops: usize,
    /// Exploration budget the benchmark is meant for.
    pub max_hops: usize,
    /// Random out-edges added per entity before planting.
    pub distractors: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            entities: 1000,
            relations: 8,
            hops: 2,
            max_hops: 2,
            distractors: 4,
            train: 500,
            valid: 100,
            test: 100,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(Error::Config("synthetic pattern needs at least one hop".into()));
        }
        if self.hops > self.max_hops {
            return Err(Error::Config(format!(
                "pattern of {} hops exceeds the exploration budget of {}",
                self.hops, self.max_hops
            )));
        }
        if self.relations < self.hops {
            return Err(Error::Config(format!(
                "{} relations cannot form a {}-hop pattern",
                self.relations, self.hops
            )));
        }
        if self.entities < 2 * (self.hops + 1) {
            return Err(Error::Config("too few entities for the pattern".into()));
        }
        if self.distractors >= self.entities {
            return Err(Error::Config("distractor count must be below the entity count".into()));
        }
        Ok(())
    }

    pub fn num_questions(&self) -> usize {
        self.train + self.valid + self.test
    }

    pub fn relation_name(&self, r: usize) -> String {
        match RELATION_WORDS.get(r) {
            Some(w) if self.relations <= RELATION_WORDS.len() => (*w).to_owned(),
            _ => format!("relation_{r}"),
        }
    }

    pub fn entity_name(&self, e: usize) -> String {
        let width = (self.entities.max(2) - 1).to_string().len();
        format!("entity_{e:0width$}")
    }
}

/// A planted question before naming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedChain {
    pub pattern: usize,
    /// `hops + 1` entities from topic to answer.
    pub entities: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub triples: Vec<(String, String, String)>,
    pub train: Vec<QaExample>,
    pub valid: Vec<QaExample>,
    pub test: Vec<QaExample>,
    pub chains: Vec<PlantedChain>,
}

fn question_text(spec: &SynthSpec, pattern: usize, topic: &str) -> String {
    let mut q = String::from("what is");
    for i in (0..spec.hops).rev() {
        q.push_str(&format!(" the {} of", spec.relation_name(pattern * spec.hops + i)));
    }
    q.push_str(&format!(" {topic} ?"));
    q
}

struct Builder {
    out_rel: Vec<HashSet<usize>>,
    adjacent: HashSet<(usize, usize)>,
    triples: Vec<(usize, usize, usize)>,
    edges: HashSet<(usize, usize, usize)>,
}

impl Builder {
    fn add(&mut self, h: usize, r: usize, t: usize) -> bool {
        if !self.edges.insert((h, r, t)) {
            return false;
        }
        self.out_rel[h].insert(r);
        self.adjacent.insert((h.min(t), h.max(t)));
        self.triples.push((h, r, t));
        true
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacent.contains(&(a.min(b), a.max(b)))
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.entities;
    let mut b = Builder {
        out_rel: vec![HashSet::new(); n],
        adjacent: HashSet::new(),
        triples: Vec::new(),
        edges: HashSet::new(),
    };
    for h in 0..n {
        let mut added = 0;
        while added < spec.distractors {
            let t = rng.gen_range(0..n);
            if t != h && b.add(h, rng.gen_range(0..spec.relations), t) {
                added += 1;
            }
        }
    }

    let patterns = spec.relations / spec.hops;
    let mut fresh: Vec<usize> = (0..n).collect();
    fresh.shuffle(&mut rng);
    let mut used_topics: HashSet<(usize, usize)> = HashSet::new();
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut chains = Vec::with_capacity(spec.num_questions());
    let budget = 200 * spec.num_questions().max(1);
    let mut attempts = 0;
    while chains.len() < spec.num_questions() {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Config(format!(
                "could only plant {} of {} questions; add entities or reduce distractors",
                chains.len(),
                spec.num_questions()
            )));
        }
        let pattern = rng.gen_range(0..patterns);
        let rels: Vec<usize> = (0..spec.hops).map(|i| pattern * spec.hops + i).collect();
        // unused entities first keep chains apart while they last
        let mut draw = |rng: &mut ChaCha8Rng| fresh.pop().unwrap_or_else(|| rng.gen_range(0..n));
        let mut chain = vec![draw(&mut rng)];
        let ok = loop {
            let i = chain.len() - 1;
            let cur = chain[i];
            if b.out_rel[cur].contains(&rels[i]) {
                break false;
            }
            let next = draw(&mut rng);
            if chain.contains(&next) {
                break false;
            }
            chain.push(next);
            if chain.len() == spec.hops + 1 {
                break true;
            }
        };
        let topic = chain[0];
        let answer = *chain.last().unwrap();
        // no new edge may join an earlier topic to its answer
        if !ok
            || used_topics.contains(&(topic, pattern))
            || b.adjacent(topic, answer)
            || chain.windows(2).any(|w| pairs.contains(&(w[0].min(w[1]), w[0].max(w[1]))))
        {
            continue;
        }
        for (i, w) in chain.windows(2).enumerate() {
            b.add(w[0], rels[i], w[1]);
        }
        used_topics.insert((topic, pattern));
        pairs.insert((topic.min(answer), topic.max(answer)));
        chains.push(PlantedChain {
            pattern,
            entities: chain,
        });
    }

    let ent = |e: usize| spec.entity_name(e);
    let triples = b
        .triples
        .iter()
        .map(|&(h, r, t)| (ent(h), spec.relation_name(r), ent(t)))
        .collect();
    let mut questions = chains.iter().map(|c| {
        let topic = ent(c.entities[0]);
        QaExample {
            question: question_text(spec, c.pattern, &topic),
            topic_entities: vec![topic],
            answers: vec![ent(*c.entities.last().unwrap())],
        }
    });
    let train = questions.by_ref().take(spec.train).collect();
    let valid = questions.by_ref().take(spec.valid).collect();
    let test = questions.collect();
    Ok(SynthData {
        triples,
        train,
        valid,
        test,
        chains,
    })
}

/// Files written by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub kg: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub config: PathBuf,
}

/// Default run configuration for a generated benchmark.
pub fn benchmark_config(spec: &SynthSpec) -> EtdConfig {
    let mut c = EtdConfig::default();
    c.data.kg = Some("kg.tsv".into());
    c.data.train = Some("train.jsonl".into());
    c.data.valid = Some("valid.jsonl".into());
    c.data.test = Some("test.jsonl".into());
    c.model.d = 64;
    c.model.steps = spec.max_hops;
    c.model.top_k = 20;
    c.train.params.learning_rate = 3e-3;
    c.train.params.weight_decay = 1e-4;
    c.train.params.seed = spec.seed;
    c
}

pub fn write_synthetic(dir: impl AsRef<Path>, spec: &SynthSpec) -> Result<SynthFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = generate(spec)?;
    let files = SynthFiles {
        kg: dir.join("kg.tsv"),
        train: dir.join("train.jsonl"),
        valid: dir.join("valid.jsonl"),
        test: dir.join("test.jsonl"),
        config: dir.join("etd.toml"),
    };
    let mut tsv = String::new();
    for (h, r, t) in &data.triples {
        tsv.push_str(&format!("{h}\t{r}\t{t}\n"));
    }
    std::fs::write(&files.kg, tsv).map_err(|e| Error::io(&files.kg, e))?;
    write_examples(&files.train, &data.train)?;
    write_examples(&files.valid, &data.valid)?;
    write_examples(&files.test, &data.test)?;
    let config = benchmark_config(spec).to_toml();
    std::fs::write(&files.config, config).map_err(|e| Error::io(&files.config, e))?;
    Ok(files)
}
