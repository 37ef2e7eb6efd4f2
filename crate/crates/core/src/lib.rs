//! Explore-then-determine question answering over knowledge graphs.
//!
//! A small attention-pruned graph network walks out from the question's
//! topic entities, scores every entity it reached, and extracts the
//! strongest evidence chain to each top candidate. Those candidates, their
//! probabilities and chains are rendered into a multiple-choice prompt for
//! an external chat model, whose reply is parsed back into a single answer.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod evidence;
pub mod error;
pub mod explorer;
pub mod gateway;
pub mod grad;
pub mod kg;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod prompt;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RelationId};
pub use model::{Model, ModelShape};
