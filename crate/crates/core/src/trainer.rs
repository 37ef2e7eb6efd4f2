//! Mini-batch training of the explorer and encoder maps with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::encoding::{RawEmbedding, RelationTable, RelationTexts};
use crate::error::{Error, Result};
use crate::explorer::explore;
use crate::grad::{backward, question_loss, LossStats};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::model::{Model, ModelShape, StepParams};
use crate::optim::Adam;

/// A question with its frozen raw encoding and resolved entity ids.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub question: String,
    pub raw: RawEmbedding,
    pub topics: Vec<EntityId>,
    pub answers: Vec<EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Hits1,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub select_by: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            batch_size: 20,
            max_epochs: 30,
            seed: 0,
            select_by: Selection::Hits1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Graph plus frozen relation texts; everything the loss needs besides parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub kg: &'a KnowledgeGraph,
    pub texts: &'a RelationTexts,
}

impl TrainContext<'_> {
    fn explore_one(
        &self,
        model: &Model,
        table: &RelationTable,
        ex: &TrainExample,
    ) -> Result<crate::explorer::ExplorationResult> {
        let h_q = model.encoder.project(&ex.raw)?;
        explore(self.kg, model, table, &h_q, &ex.topics)
    }

    /// Summed loss over `batch`.
    pub fn loss(&self, model: &Model, batch: &[TrainExample]) -> Result<LossStats> {
        if batch.is_empty() {
            return Err(Error::Precondition("loss needs a non-empty batch".into()));
        }
        let table = RelationTable::build(&model.encoder, self.texts)?;
        let per: Vec<LossStats> = batch
            .par_iter()
            .map(|ex| Ok(question_loss(&self.explore_one(model, &table, ex)?, &ex.answers)))
            .collect::<Result<_>>()?;
        let mut total = LossStats::default();
        per.into_iter().for_each(|s| total.merge(s));
        Ok(total)
    }

    /// Summed loss over `batch` and its gradient for every parameter block.
    pub fn gradients(&self, model: &Model, batch: &[TrainExample]) -> Result<(LossStats, Model)> {
        if batch.is_empty() {
            return Err(Error::Precondition("gradients need a non-empty batch".into()));
        }
        let table = RelationTable::build(&model.encoder, self.texts)?;
        let per: Vec<(LossStats, Model)> = batch
            .par_iter()
            .map(|ex| {
                let result = self.explore_one(model, &table, ex)?;
                let mut g = model.zeros_like();
                let stats = backward(self.kg, model, self.texts, &table, &ex.raw, &result, &ex.answers, &mut g)?;
                Ok((stats, g))
            })
            .collect::<Result<_>>()?;
        // fixed reduction order
        let mut iter = per.into_iter();
        let (mut total, mut grads) = iter.next().expect("non-empty batch");
        for (s, g) in iter {
            total.merge(s);
            grads.add_scaled(&g, 1.0);
        }
        Ok((total, grads))
    }

    /// Explore-only Hits@1 by entity id.
    pub fn hits1(&self, model: &Model, examples: &[TrainExample]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let table = RelationTable::build(&model.encoder, self.texts)?;
        let hits: Vec<bool> = examples
            .par_iter()
            .map(|ex| {
                let res = self.explore_one(model, &table, ex)?;
                Ok(res.top1().is_some_and(|t| ex.answers.contains(&t)))
            })
            .collect::<Result<_>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub missed_rate: f64,
    pub valid_hits1: Option<f64>,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Reuses the first `min(old, new)` step blocks and initialises the rest from `seed`.
pub fn adapt_steps(model: &mut Model, steps: usize, seed: u64) {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5354_4550);
    model.explorer.steps.truncate(steps);
    while model.explorer.steps.len() < steps {
        model.explorer.steps.push(StepParams::init(d, &mut rng));
    }
}

/// Starting model: fresh from `shape`, or adapted from `initial`.
pub fn starting_model(shape: ModelShape, seed: u64, initial: Option<&Checkpoint>) -> Result<Model> {
    shape.validate()?;
    match initial {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Model::init(shape, &mut rng)
        }
        Some(ck) => {
            let old = ck.shape();
            if old.d != shape.d || old.d_l != shape.d_l {
                return Err(Error::Checkpoint(format!(
                    "initial checkpoint has d={} d_L={}, configuration wants d={} d_L={}",
                    old.d, old.d_l, shape.d, shape.d_l
                )));
            }
            let mut model = ck.model.clone();
            adapt_steps(&mut model, shape.steps, seed);
            model.explorer.top_k = shape.top_k;
            Ok(model)
        }
    }
}

pub fn train(
    ctx: TrainContext<'_>,
    train_set: &[TrainExample],
    valid_set: Option<&[TrainExample]>,
    config: &TrainConfig,
    shape: ModelShape,
    initial: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    let valid_set = valid_set.filter(|v| !v.is_empty());
    let mut model = starting_model(shape, config.seed, initial)?;
    let mut opt = Adam::new(&model, config.learning_rate, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::with_capacity(config.max_epochs);
    let mut meta = TrainingMeta::default();
    let mut best: Option<(f64, Model, Adam)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_stats = LossStats::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (stats, grads) = ctx.gradients(&model, &batch)?;
            epoch_stats.merge(stats);
            opt.step(&mut model, &grads);
        }
        if let Some(name) = model.first_non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        let train_loss = epoch_stats.loss / train_set.len() as f64;
        let missed_rate = epoch_stats.missed as f64 / epoch_stats.answers.max(1) as f64;

        let (valid_hits1, valid_loss) = match valid_set {
            Some(v) => {
                let hits = ctx.hits1(&model, v)?;
                let loss = ctx.loss(&model, v)?.loss / v.len() as f64;
                (Some(hits), Some(loss))
            }
            None => (None, None),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} missed {missed_rate:.3}{}",
            valid_hits1.map(|h| format!(" valid hits@1 {h:.4}")).unwrap_or_default()
        );
        meta.loss_curve.push(train_loss);
        if let Some(h) = valid_hits1 {
            meta.valid_hits1.push(h);
        }
        meta.epochs = epoch;
        history.push(EpochRecord {
            epoch,
            train_loss,
            missed_rate,
            valid_hits1,
            valid_loss,
        });

        if let (Some(h), Some(l)) = (valid_hits1, valid_loss) {
            let score = match config.select_by {
                Selection::Hits1 => h,
                Selection::Loss => -l,
            };
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, model.clone(), opt.clone()));
                meta.best_epoch = Some(epoch);
            }
        }
    }

    let (model, opt) = match best {
        Some((_, m, o)) => (m, o),
        None => (model, opt),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            optimizer: Some(opt),
            meta,
        },
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode_text, EmbeddingProvider, HashProvider, RelationTexts};

    fn shape(steps: usize) -> ModelShape {
        ModelShape {
            d: 4,
            d_l: 8,
            steps,
            top_k: 3,
        }
    }

    #[test]
    fn adapt_reuses_prefix_and_seeds_extras() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = Model::init(shape(3), &mut rng).unwrap();
        let mut short = base.clone();
        adapt_steps(&mut short, 2, 5);
        assert_eq!(short.explorer.steps[..], base.explorer.steps[..2]);
        let mut long = base.clone();
        adapt_steps(&mut long, 4, 5);
        assert_eq!(long.explorer.steps[..3], base.explorer.steps[..]);
        let mut long2 = base.clone();
        adapt_steps(&mut long2, 4, 5);
        assert_eq!(long, long2);
    }

    #[test]
    fn starting_model_checks_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ck = Checkpoint {
            model: Model::init(shape(3), &mut rng).unwrap(),
            optimizer: None,
            meta: Default::default(),
        };
        let mut wrong = shape(2);
        wrong.d_l = 9;
        assert!(matches!(starting_model(wrong, 0, Some(&ck)), Err(Error::Checkpoint(_))));
        let mut ok = shape(2);
        ok.top_k = 40;
        let m = starting_model(ok, 0, Some(&ck)).unwrap();
        assert_eq!(m.explorer.num_steps(), 2);
        assert_eq!(m.explorer.top_k, 40);
        assert_eq!(m.encoder, ck.model.encoder);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.learning_rate = 1e-3;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    fn tiny_world() -> (KnowledgeGraph, RelationTexts, Vec<TrainExample>) {
        let kg = KnowledgeGraph::from_named_triples([
            ("a", "likes", "b"),
            ("a", "hates", "c"),
            ("d", "likes", "e"),
            ("d", "hates", "f"),
        ]);
        let provider = HashProvider::new(8);
        let texts = RelationTexts::encode(&provider, &kg).unwrap();
        let mk = |q: &str, t: &str, a: &str| TrainExample {
            question: q.into(),
            raw: encode_text(&provider, q).unwrap(),
            topics: vec![kg.entity_id(t).unwrap()],
            answers: vec![kg.entity_id(a).unwrap()],
        };
        let ex = vec![
            mk("who does a likes", "a", "b"),
            mk("who does a hates", "a", "c"),
            mk("who does d likes", "d", "e"),
            mk("who does d hates", "d", "f"),
        ];
        assert_eq!(provider.dim(), 8);
        (kg, texts, ex)
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (kg, texts, _) = tiny_world();
        let ctx = TrainContext { kg: &kg, texts: &texts };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(shape(1), &mut rng).unwrap();
        assert!(matches!(ctx.loss(&model, &[]), Err(Error::Precondition(_))));
        assert!(matches!(ctx.gradients(&model, &[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let (kg, texts, ex) = tiny_world();
        let ctx = TrainContext { kg: &kg, texts: &texts };
        let config = TrainConfig {
            learning_rate: 0.02,
            weight_decay: 0.0,
            batch_size: 2,
            max_epochs: 40,
            seed: 3,
            select_by: Selection::Hits1,
        };
        let run = || train(ctx, &ex, None, &config, shape(1), None).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.checkpoint.meta.loss_curve, b.checkpoint.meta.loss_curve);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        let curve = &a.checkpoint.meta.loss_curve;
        assert!(curve.last().unwrap() < &(curve[0] * 0.5), "{curve:?}");
        assert_eq!(ctx.hits1(&a.checkpoint.model, &ex).unwrap(), 1.0);
    }

    #[test]
    fn validation_selects_best_epoch() {
        let (kg, texts, ex) = tiny_world();
        let ctx = TrainContext { kg: &kg, texts: &texts };
        let config = TrainConfig {
            learning_rate: 0.02,
            weight_decay: 0.0,
            batch_size: 4,
            max_epochs: 5,
            seed: 1,
            select_by: Selection::Loss,
        };
        let out = train(ctx, &ex, Some(&ex), &config, shape(1), None).unwrap();
        let best = out.checkpoint.meta.best_epoch.unwrap();
        let losses: Vec<f64> = out.history.iter().map(|h| h.valid_loss.unwrap()).collect();
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(losses[best - 1], min);
    }
}
