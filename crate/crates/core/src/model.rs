//! Trainable parameter sets and their flat named-block view.
//!
//! The named-block view is what the optimizer, the checkpoint format and the
//! gradient checker iterate over, so every parameter must appear in exactly
//! one block and block order must never change between releases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::EncoderParams;
use crate::error::{Error, Result};
use crate::tensor::{glorot_vec, Matrix};

/// Attention rows and propagation matrix of one exploration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// Weights on the head entity representation.
    pub att_head: Vec<f64>,
    /// Weights on the relation embedding.
    pub att_relation: Vec<f64>,
    /// Weights on the question embedding.
    pub att_question: Vec<f64>,
    /// Weights on `h_r ⊙ h_q`.
    pub att_joint: Vec<f64>,
    /// `d × d` message transform.
    pub propagate: Matrix,
}

impl StepParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            att_head: vec![0.0; d],
            att_relation: vec![0.0; d],
            att_question: vec![0.0; d],
            att_joint: vec![0.0; d],
            propagate: Matrix::zeros(d, d),
        }
    }

    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        Self {
            att_head: glorot_vec(d, d, 1, rng),
            att_relation: glorot_vec(d, d, 1, rng),
            att_question: glorot_vec(d, d, 1, rng),
            att_joint: glorot_vec(d, d, 1, rng),
            propagate: Matrix::glorot(d, d, rng),
        }
    }
}

/// `Linear(2d → d) → ReLU → Linear(d → 1)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub hidden: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out: Vec<f64>,
    pub out_bias: f64,
}

impl ScorerParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            hidden: Matrix::zeros(d, 2 * d),
            hidden_bias: vec![0.0; d],
            out: vec![0.0; d],
            out_bias: 0.0,
        }
    }

    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        Self {
            hidden: Matrix::glorot(d, 2 * d, rng),
            hidden_bias: vec![0.0; d],
            out: glorot_vec(d, d, 1, rng),
            out_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorerParams {
    pub steps: Vec<StepParams>,
    pub scorer: ScorerParams,
    /// Per-head retention budget.
    pub top_k: usize,
}

impl ExplorerParams {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub d: usize,
    pub d_l: usize,
    pub steps: usize,
    pub top_k: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_l == 0 {
            return Err(Error::Config("d and d_L must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("step count L must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top-K must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderParams,
    pub explorer: ExplorerParams,
}

impl Model {
    pub fn init<R: Rng>(shape: ModelShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let encoder = EncoderParams::init(shape.d, shape.d_l, rng);
        let steps = (0..shape.steps).map(|_| StepParams::init(shape.d, rng)).collect();
        let scorer = ScorerParams::init(shape.d, rng);
        Ok(Self {
            encoder,
            explorer: ExplorerParams {
                steps,
                scorer,
                top_k: shape.top_k,
            },
        })
    }

    /// All-zero model of the given shape.
    pub fn init_zeroed(shape: ModelShape) -> Self {
        Self {
            encoder: EncoderParams::zeros(shape.d, shape.d_l),
            explorer: ExplorerParams {
                steps: (0..shape.steps).map(|_| StepParams::zeros(shape.d)).collect(),
                scorer: ScorerParams::zeros(shape.d),
                top_k: shape.top_k,
            },
        }
    }

    /// All-zero parameters with the same shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self::init_zeroed(self.shape())
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            d: self.encoder.dim(),
            d_l: self.encoder.raw_dim(),
            steps: self.explorer.num_steps(),
            top_k: self.explorer.top_k,
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn block_names(&self) -> Vec<String> {
        self.blocks().into_iter().map(|(n, _)| n).collect()
    }

    /// Named views of every trainable parameter, in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("encoder.w_l".into(), self.encoder.w_l.as_slice()),
            ("encoder.w_neg".into(), self.encoder.w_neg.as_slice()),
            ("encoder.b_neg".into(), &self.encoder.b_neg),
            ("encoder.h_id".into(), &self.encoder.h_id),
        ];
        for (i, s) in self.explorer.steps.iter().enumerate() {
            let l = i + 1;
            out.push((format!("step{l}.att_head"), &s.att_head));
            out.push((format!("step{l}.att_relation"), &s.att_relation));
            out.push((format!("step{l}.att_question"), &s.att_question));
            out.push((format!("step{l}.att_joint"), &s.att_joint));
            out.push((format!("step{l}.propagate"), s.propagate.as_slice()));
        }
        let sc = &self.explorer.scorer;
        out.push(("scorer.hidden".into(), sc.hidden.as_slice()));
        out.push(("scorer.hidden_bias".into(), &sc.hidden_bias));
        out.push(("scorer.out".into(), &sc.out));
        out.push(("scorer.out_bias".into(), std::slice::from_ref(&sc.out_bias)));
        out
    }

    /// Mutable counterpart of [`Model::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("encoder.w_l".into(), self.encoder.w_l.as_mut_slice()),
            ("encoder.w_neg".into(), self.encoder.w_neg.as_mut_slice()),
            ("encoder.b_neg".into(), &mut self.encoder.b_neg),
            ("encoder.h_id".into(), &mut self.encoder.h_id),
        ];
        for (i, s) in self.explorer.steps.iter_mut().enumerate() {
            let l = i + 1;
            out.push((format!("step{l}.att_head"), &mut s.att_head));
            out.push((format!("step{l}.att_relation"), &mut s.att_relation));
            out.push((format!("step{l}.att_question"), &mut s.att_question));
            out.push((format!("step{l}.att_joint"), &mut s.att_joint));
            out.push((format!("step{l}.propagate"), s.propagate.as_mut_slice()));
        }
        let sc = &mut self.explorer.scorer;
        out.push(("scorer.hidden".into(), sc.hidden.as_mut_slice()));
        out.push(("scorer.hidden_bias".into(), &mut sc.hidden_bias));
        out.push(("scorer.out".into(), &mut sc.out));
        out.push(("scorer.out_bias".into(), std::slice::from_mut(&mut sc.out_bias)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `self += scale · other`, block by block.
    pub fn add_scaled(&mut self, other: &Model, scale: f64) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }
}
