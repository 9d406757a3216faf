//! Entity state tracking over procedural text.
//!
//! A paragraph is read one sentence at a time. At each step a span-extraction
//! reader asks where every entity is, conditioned on that entity's node in a
//! graph of entities and locations; the answers update the graph through soft
//! coreference and recurrent layers. Everything differentiable runs on the
//! small reverse-mode engine in [`tensor`].

pub mod config;
pub mod corpus;
pub mod encoder;
mod error;
pub mod eval;
pub mod forward;
pub mod graph;
pub mod mrc;
pub mod pipeline;
pub mod tensor;

pub use config::{Ablation, ModelConfig};
pub use corpus::{LocationGrid, LocationState, ProcessInstance};
pub use error::{Error, Result};
pub use eval::{count_violations, score_task1, score_task2, Task1Report, Task2Report, ViolationReport};
pub use forward::Forward;
pub use mrc::{SpanScores, StateClass, StatePrediction};
pub use pipeline::{
    derive_events, predict_process, train, EventSet, Model, PredictionGrid, ResolvedGrid, ResolvedState, TrainConfig,
};
pub use tensor::{ParamSet, Tape, Tensor, Var};
