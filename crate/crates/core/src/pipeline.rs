//! End-to-end orchestration: load data, train, explore, prompt, determine
//! and score.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::EtdConfig;
use crate::dataset::{is_hit, load_dataset, Dataset, ResolvedExample};
use crate::encoding::{encode_text, EmbeddingProvider, RelationTable, RelationTexts};
use crate::error::{Error, Result};
use crate::evidence::{backtrack, render_path, EvidencePath};
use crate::explorer::{explore, ExplorationResult};
use crate::gateway::{parse_answer, ChatBackend, Determination, Method};
use crate::kg::{load_triples, EntityId, KnowledgeGraph};
use crate::model::{Model, ModelShape};
use crate::prompt::{build_prompt, select_top_n, PromptBundle, PromptCandidate, Variant};
use crate::trainer::{train, TrainContext, TrainExample, TrainOutcome};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Graph, encoder and frozen relation texts for one configuration.
pub struct Workspace {
    pub config: EtdConfig,
    pub kg: KnowledgeGraph,
    pub provider: Box<dyn EmbeddingProvider>,
    pub texts: RelationTexts,
}

impl Workspace {
    pub fn open(config: EtdConfig) -> Result<Self> {
        let kg_path = config.require(&config.data.kg, "data.kg")?;
        let kg = load_triples(kg_path)?;
        log::info!(
            "loaded {} entities, {} relations, {} triples",
            kg.num_entities(),
            kg.num_base_relations(),
            kg.num_base_triples()
        );
        let provider = config.encoder.provider()?;
        Self::from_parts(config, kg, provider)
    }

    pub fn from_parts(config: EtdConfig, kg: KnowledgeGraph, provider: Box<dyn EmbeddingProvider>) -> Result<Self> {
        let texts = RelationTexts::encode(provider.as_ref(), &kg)?;
        Ok(Self {
            config,
            kg,
            provider,
            texts,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.config.shape(self.provider.dim())
    }

    pub fn dataset(&self, path: &Path) -> Result<Dataset> {
        load_dataset(path, &self.kg)
    }

    pub fn context(&self) -> TrainContext<'_> {
        TrainContext {
            kg: &self.kg,
            texts: &self.texts,
        }
    }

    pub fn encode_examples(&self, data: &Dataset) -> Result<Vec<TrainExample>> {
        data.examples
            .iter()
            .map(|ex| {
                Ok(TrainExample {
                    question: ex.example.question.clone(),
                    raw: encode_text(self.provider.as_ref(), &ex.example.question)?,
                    topics: ex.topics.clone(),
                    answers: ex.answers.clone(),
                })
            })
            .collect()
    }

    /// Trains on `data.train`, selecting on `data.valid` when present.
    pub fn train(&self, initial: Option<&Checkpoint>) -> Result<TrainOutcome> {
        let train_path = self.config.require(&self.config.data.train, "data.train")?;
        let train_set = self.encode_examples(&self.dataset(train_path)?)?;
        let valid_set = match &self.config.data.valid {
            Some(p) => Some(self.encode_examples(&self.dataset(p)?)?),
            None => None,
        };
        train(
            self.context(),
            &train_set,
            valid_set.as_deref(),
            &self.config.train.params,
            self.shape(),
            initial,
        )
    }

    pub fn engine(&self, model: Model) -> Result<Engine<'_>> {
        if model.encoder.raw_dim() != self.provider.dim() {
            return Err(Error::Checkpoint(format!(
                "model expects {}-wide text embeddings, encoder produces {}",
                model.encoder.raw_dim(),
                self.provider.dim()
            )));
        }
        let table = RelationTable::build(&model.encoder, &self.texts)?;
        Ok(Engine {
            ws: self,
            model,
            table,
        })
    }

    pub fn resolve_topics(&self, names: &[String]) -> Result<Vec<EntityId>> {
        names
            .iter()
            .map(|n| {
                self.kg
                    .entity_id(n)
                    .ok_or_else(|| Error::Precondition(format!("topic entity `{n}` is not in the graph")))
            })
            .collect()
    }
}

/// A top-N candidate with its evidence.
#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    pub entity: EntityId,
    pub name: String,
    pub probability: f64,
    pub facts: Vec<String>,
    pub path: EvidencePath,
}

impl Reference {
    pub fn prompt_candidate(&self) -> PromptCandidate {
        PromptCandidate {
            entity: self.entity,
            name: self.name.clone(),
            probability: self.probability,
            facts: self.facts.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Answer {
    pub question: String,
    pub references: Vec<Reference>,
    pub prompt: PromptBundle,
    pub determination: Determination,
    pub predicted: String,
    pub explore_only: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuestionRecord {
    pub question: String,
    pub gold: Vec<String>,
    pub predicted: String,
    pub method: Method,
    pub explore_only: String,
    pub correct: bool,
    pub explore_only_correct: bool,
    /// No gold answer is among the explored candidates.
    pub missed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub mean_frontier: f64,
    pub mean_candidate_edges: f64,
    pub mean_retained_edges: f64,
    pub max_retained_per_head: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTiming {
    pub explore_secs: f64,
    pub prompt_secs: f64,
    pub llm_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub questions: usize,
    pub skipped: usize,
    pub prompt_variant: Variant,
    pub top_n: usize,
    #[serde(rename = "hits@1")]
    pub hits1: f64,
    #[serde(rename = "explore_only_hits@1")]
    pub explore_only_hits1: f64,
    pub missed_answer_rate: f64,
    pub methods: BTreeMap<String, usize>,
    pub steps: Vec<StepSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTiming>,
    pub records: Vec<QuestionRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneStep {
    pub step: usize,
    pub pruned_mean_edges: f64,
    pub unpruned_mean_edges: f64,
    pub pruned_mean_frontier: f64,
    pub unpruned_mean_frontier: f64,
    pub max_retained_per_head: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneReport {
    pub top_k: usize,
    pub questions: usize,
    pub steps: Vec<PruneStep>,
}

/// Per-step means over a set of explorations.
pub fn summarize_steps(results: &[ExplorationResult]) -> Vec<StepSummary> {
    let mut acc: BTreeMap<usize, (usize, usize, usize, usize, usize)> = BTreeMap::new();
    for r in results {
        for s in r.step_stats() {
            let e = acc.entry(s.step).or_default();
            e.0 += 1;
            e.1 += s.frontier_size;
            e.2 += s.candidate_edges;
            e.3 += s.retained_edges;
            e.4 = e.4.max(s.max_retained_per_head);
        }
    }
    acc.into_iter()
        .map(|(step, (n, f, c, r, m))| {
            let n = n as f64;
            StepSummary {
                step,
                mean_frontier: f as f64 / n,
                mean_candidate_edges: c as f64 / n,
                mean_retained_edges: r as f64 / n,
                max_retained_per_head: m,
            }
        })
        .collect()
}

struct Evaluated {
    record: QuestionRecord,
    result: ExplorationResult,
    timing: StageTiming,
}

/// A trained model bound to a workspace.
pub struct Engine<'a> {
    ws: &'a Workspace,
    model: Model,
    table: RelationTable,
}

impl<'a> Engine<'a> {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        &self.ws.kg
    }

    /// Same parameters with a different retention budget.
    pub fn with_top_k(&self, top_k: usize) -> Engine<'a> {
        let mut model = self.model.clone();
        model.explorer.top_k = top_k;
        Engine {
            ws: self.ws,
            model,
            table: self.table.clone(),
        }
    }

    pub fn explore(&self, question: &str, topics: &[EntityId]) -> Result<ExplorationResult> {
        let raw = encode_text(self.ws.provider.as_ref(), question)?;
        let h_q = self.model.encoder.project(&raw)?;
        explore(&self.ws.kg, &self.model, &self.table, &h_q, topics)
    }

    pub fn references(&self, result: &ExplorationResult, n: usize) -> Result<Vec<Reference>> {
        select_top_n(result, n)?
            .into_iter()
            .map(|(entity, probability)| {
                let path = backtrack(result, entity)?;
                Ok(Reference {
                    entity,
                    name: self.ws.kg.entity_name(entity).to_owned(),
                    probability,
                    facts: render_path(&path, &self.ws.kg),
                    path,
                })
            })
            .collect()
    }

    fn determine(
        &self,
        question: &str,
        result: &ExplorationResult,
        backend: &dyn ChatBackend,
        variant: Variant,
        top_n: usize,
        timing: &mut StageTiming,
    ) -> Result<Answer> {
        let t = Instant::now();
        let references = self.references(result, top_n)?;
        let offered: Vec<PromptCandidate> = references.iter().map(Reference::prompt_candidate).collect();
        let prompt = build_prompt(question, &offered, variant)?;
        timing.prompt_secs += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let raw = backend.complete(&prompt)?;
        timing.llm_secs += t.elapsed().as_secs_f64();
        let determination = parse_answer(&raw, &offered, variant.has_labels())?;
        Ok(Answer {
            question: question.to_owned(),
            predicted: self.ws.kg.entity_name(determination.chosen).to_owned(),
            explore_only: references[0].name.clone(),
            references,
            prompt,
            determination,
        })
    }

    /// Full pipeline for one question.
    pub fn answer(
        &self,
        question: &str,
        topics: &[EntityId],
        backend: &dyn ChatBackend,
        variant: Variant,
        top_n: usize,
    ) -> Result<Answer> {
        let result = self.explore(question, topics)?;
        self.determine(question, &result, backend, variant, top_n, &mut StageTiming::default())
    }

    fn evaluate_one(
        &self,
        ex: &ResolvedExample,
        backend: &dyn ChatBackend,
        variant: Variant,
        top_n: usize,
    ) -> Result<Evaluated> {
        let mut timing = StageTiming::default();
        let t = Instant::now();
        let result = self.explore(&ex.example.question, &ex.topics)?;
        timing.explore_secs = t.elapsed().as_secs_f64();
        let answer = self.determine(&ex.example.question, &result, backend, variant, top_n, &mut timing)?;
        let gold = &ex.example.answers;
        let missed = !ex.answers.iter().any(|a| result.candidate_index(*a).is_some());
        Ok(Evaluated {
            record: QuestionRecord {
                question: ex.example.question.clone(),
                gold: gold.clone(),
                correct: is_hit(&answer.predicted, gold),
                explore_only_correct: is_hit(&answer.explore_only, gold),
                predicted: answer.predicted,
                method: answer.determination.method,
                explore_only: answer.explore_only,
                missed,
            },
            result,
            timing,
        })
    }

    /// Scores every question; at most `parallelism` run at once and the
    /// report lists them in dataset order.
    pub fn evaluate(
        &self,
        data: &Dataset,
        backend: &dyn ChatBackend,
        variant: Variant,
        top_n: usize,
        parallelism: usize,
        with_timing: bool,
    ) -> Result<EvalReport> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let evaluated: Vec<Evaluated> = pool.install(|| {
            data.examples
                .par_iter()
                .map(|ex| self.evaluate_one(ex, backend, variant, top_n))
                .collect::<Result<_>>()
        })?;

        let n = evaluated.len();
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let mut methods: BTreeMap<String, usize> = BTreeMap::new();
        let mut timing = StageTiming::default();
        for e in &evaluated {
            let key = serde_json::to_value(e.record.method).expect("method serialises");
            *methods.entry(key.as_str().unwrap_or_default().to_owned()).or_default() += 1;
            timing.explore_secs += e.timing.explore_secs;
            timing.prompt_secs += e.timing.prompt_secs;
            timing.llm_secs += e.timing.llm_secs;
        }
        let results: Vec<ExplorationResult> = evaluated.iter().map(|e| e.result.clone()).collect();
        let records: Vec<QuestionRecord> = evaluated.into_iter().map(|e| e.record).collect();
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            questions: n,
            skipped: data.skipped,
            prompt_variant: variant,
            top_n,
            hits1: frac(records.iter().filter(|r| r.correct).count()),
            explore_only_hits1: frac(records.iter().filter(|r| r.explore_only_correct).count()),
            missed_answer_rate: frac(records.iter().filter(|r| r.missed).count()),
            methods,
            steps: summarize_steps(&results),
            timing: with_timing.then_some(timing),
            records,
        })
    }

    /// Retained-edge and frontier means against an unpruned pass.
    pub fn prune_stats(&self, data: &Dataset) -> Result<PruneReport> {
        let unpruned = self.with_top_k(usize::MAX);
        let run = |engine: &Engine<'_>| -> Result<Vec<ExplorationResult>> {
            data.examples
                .par_iter()
                .map(|ex| engine.explore(&ex.example.question, &ex.topics))
                .collect()
        };
        let pruned = summarize_steps(&run(self)?);
        let full = summarize_steps(&run(&unpruned)?);
        let steps = pruned
            .iter()
            .zip(&full)
            .map(|(p, u)| PruneStep {
                step: p.step,
                pruned_mean_edges: p.mean_retained_edges,
                unpruned_mean_edges: u.mean_retained_edges,
                pruned_mean_frontier: p.mean_frontier,
                unpruned_mean_frontier: u.mean_frontier,
                max_retained_per_head: p.max_retained_per_head,
            })
            .collect();
        Ok(PruneReport {
            top_k: self.model.explorer.top_k,
            questions: data.len(),
            steps,
        })
    }
}
