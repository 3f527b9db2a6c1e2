//! Polytuplet metric learning for multiple-choice question answering.
//!
//! A context+question pair and each of its answer choices are embedded on the
//! unit hypersphere by two independently trained encoders. The answer closest
//! to the context is predicted. Training combines a multi-negative hinge loss
//! (polytuplet loss) on the embeddings with categorical cross-entropy on
//! distance-derived logits.
//!
//! Module map:
//!
//! * [`data`] - ReClor-format ingestion, synthetic datasets, stratified splits.
//! * [`manifold`] - sphere projection and squared distances, with gradients.
//! * [`loss`] - triplet, polytuplet, cross-entropy and hybrid objectives.
//! * [`mining`] - hard / semi-hard / easy negative classification.
//! * [`encoder`] - hashed bag-of-n-grams dual encoder with manual backprop.
//! * [`training`] - optimizers, training loop, evaluation, successive halving.
//! * [`gradcheck`] - central finite-difference verification harness.
//! * [`cli`] - the `polytuplet` command line.

pub mod cli;
pub mod data;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod loss;
pub mod manifold;
pub mod mining;
pub mod training;

pub use error::{Error, Result};

pub use data::{DatasetSplit, Difficulty, McqaInstance};
pub use encoder::{EncoderParams, ModelConfig, Mode};
pub use loss::{LossOutput, PolytupletConfig, TripletConfig};
pub use manifold::{Embedding, EmbeddingBatch};
pub use mining::{MiningReport, NegativeCategory};
pub use training::{TrainConfig, TrainMode, TrainReport};
