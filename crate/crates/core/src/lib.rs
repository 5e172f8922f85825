//! Learned-difficulty data selection.
//!
//! A linear score net is co-trained with a target model under a
//! softmax-weighted loss ([`stage1`]); its negated outputs rank samples by
//! difficulty, and a greedy selector picks the hardest ones while penalizing
//! their nearest neighbors ([`selector`]). A bigram model ([`toy_model`])
//! stands in for the target model so every step is exactly checkable, and
//! [`synth`] plants ground truth to check against.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod feature_store;
pub mod jsonl;
mod math;
pub mod pipeline;
pub mod score_net;
pub mod selector;
pub mod stage1;
pub mod synth;
pub mod toy_model;

pub use error::{Error, Result};
pub use feature_store::{FeatureMatrix, InstructionMeta};
pub use score_net::ScoreNetParams;
pub use selector::{DifficultyTable, NeighborIndex, SelectionResult};
pub use stage1::{TrainConfig, TrainLog};
pub use toy_model::{TokenSample, ToyBigramModel};
