//! JSONL question sets and Hits@1 scoring.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};

/// One line of a question file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaExample {
    pub question: String,
    pub topic_entities: Vec<String>,
    pub answers: Vec<String>,
}

/// A question whose topic entities all exist in the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExample {
    pub example: QaExample,
    pub topics: Vec<EntityId>,
    /// Answers present in the graph; the rest can only be matched by name.
    pub answers: Vec<EntityId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<ResolvedExample>,
    /// Questions dropped because a topic entity is not in the graph.
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Parses a JSONL file in file order; blank lines are ignored.
pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QaExample = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if ex.topic_entities.is_empty() {
            return Err(Error::parse(path, i + 1, "topic_entities is empty"));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn resolve(examples: Vec<QaExample>, kg: &KnowledgeGraph) -> Dataset {
    let mut data = Dataset::default();
    for ex in examples {
        let topics: Option<Vec<EntityId>> = ex.topic_entities.iter().map(|t| kg.entity_id(t)).collect();
        let Some(topics) = topics else {
            log::warn!("skipping question with unknown topic entity: {:?}", ex.question);
            data.skipped += 1;
            continue;
        };
        let answers = ex.answers.iter().filter_map(|a| kg.entity_id(a)).collect();
        data.examples.push(ResolvedExample {
            example: ex,
            topics,
            answers,
        });
    }
    if data.skipped > 0 {
        log::warn!("skipped {} question(s) with unresolvable topic entities", data.skipped);
    }
    data
}

pub fn load_dataset(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Dataset> {
    Ok(resolve(read_examples(path)?, kg))
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[QaExample]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("example serialises");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Lowercased and trimmed surface form.
pub fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

pub fn is_hit(predicted: &str, gold: &[String]) -> bool {
    let p = normalize(predicted);
    gold.iter().any(|g| normalize(g) == p)
}

/// Fraction of questions whose prediction matches a gold answer by name.
pub fn eval_hits1(predictions: &[String], gold: &[Vec<String>]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} questions",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| is_hit(p, g)).count();
    Ok(hits as f64 / predictions.len() as f64)
}
