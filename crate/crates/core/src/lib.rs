//! Multi-task bi-LSTM sequence labelling with transductive auxiliary-task
//! self-training, and the experiment harness around it.

pub mod autodiff;
pub mod conditions;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod self_training;
pub mod synthetic;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use autodiff::{Gradients, Graph, NodeRef, OpKind, Operator, ParamId, ParamSet};
pub use conditions::{AuxSource, Condition, ExperimentPlan, Materials};
pub use corpus::{Corpus, Provenance, Sentence};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, TaskRole, TaskSpec, TokenPrediction};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use trainer::{train_mtl, train_single_task, TaskData, TrainConfig, TrainOutcome};
pub use vocab::{build_vocab, Vocabulary};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParamSet64 = ParamSet<f64>;
pub type Gradients64 = Gradients<f64>;
pub type Graph64<'p> = Graph<'p, f64>;
pub type Model64 = ModelParams<f64>;
pub type Model32 = ModelParams<f32>;
